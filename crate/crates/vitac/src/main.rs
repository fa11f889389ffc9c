use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use vitac::config::{sha256_hex, Config, TouchMode};
use vitac::dataset::{read_dataset, write_dataset};
use vitac::image::{gray_tile, grid, ppm};
use vitac::pipeline::{self, AblationAxis};
use vitac::report;
use vitac::run::{read, run_dir, write_atomic};
use vitac_core::nn::gradcheck::{operator_suite, GradCheck};
use vitac_core::nn::ParamStore;
use vitac_core::vtcon::{observation_gradchecks, Modality};
use vitac_core::vtgen::{composed_gradcheck, VtGen};

#[derive(Parser)]
#[command(name = "vitac", version, about = "Vision-to-touch generation and visual-tactile pushing experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed, same as `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted-key override such as `agent.fusion=add`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Root under which run directories are created.
    #[arg(long, default_value = "runs", global = true)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the scripted expert and write a paired dataset.
    Collect,
    /// Train the vision-to-touch generator.
    TrainGen {
        /// Dataset directory; collected in-process when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the contrastive SAC agent.
    TrainPolicy {
        /// Generator checkpoint, required for generated touch.
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Evaluate a trained agent with the deterministic policy.
    Evaluate {
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train and evaluate every variant of one component.
    Ablate {
        axis: Axis,
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Dump paired visual and tactile image grids.
    RenderDataset {
        #[arg(long)]
        data: PathBuf,
        /// Adds a generated-touch column.
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        sequences: usize,
        #[arg(long, default_value_t = 8)]
        steps: usize,
    },
    /// Finite-difference gradient checks of every operator and composed network.
    Gradcheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Fusion,
    Contrastive,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.common.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    cfg = cfg.with_overrides(&cli.common.overrides)?;
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    let root = &cli.common.out;
    let dir = match &cli.command {
        Command::Collect => collect(&cfg, root)?,
        Command::TrainGen { data } => train_gen(&cfg, root, data.as_deref())?,
        Command::TrainPolicy { generator } => train_policy(&cfg, root, generator.as_deref())?,
        Command::Evaluate { agent, generator, episodes } => evaluate(&cfg, root, agent, generator.as_deref(), *episodes)?,
        Command::Ablate { axis, generator } => ablate(&cfg, root, *axis, generator.as_deref())?,
        Command::RenderDataset { data, generator, sequences, steps } => {
            render_dataset(&cfg, root, data, generator.as_deref(), *sequences, *steps)?
        }
        Command::Gradcheck => gradcheck(&cfg, root)?,
    };
    println!("{}", dir.display());
    Ok(())
}

fn start(cfg: &Config, root: &Path, command: &str) -> Result<PathBuf> {
    let dir = run_dir(root, command, cfg);
    write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(dir)
}

fn collect(cfg: &Config, root: &Path) -> Result<PathBuf> {
    let dir = start(cfg, root, "collect")?;
    let data = pipeline::collect(cfg)?;
    write_dataset(&dir.join("dataset"), &data)?;
    let wins = data.sequences.iter().filter(|s| s.success).count();
    eprintln!("collected {} sequences, {} successful", data.sequences.len(), wins);
    Ok(dir)
}

fn train_gen(cfg: &Config, root: &Path, data: Option<&Path>) -> Result<PathBuf> {
    let dir = start(cfg, root, "train-gen")?;
    let data = match data {
        Some(d) => read_dataset(d)?,
        None => pipeline::collect(cfg)?,
    };
    let (trainer, rep) = pipeline::train_gen(cfg, &data, |e| {
        eprintln!("epoch {} loss {:.5} val ssim {:.4} psnr {:.2}", e.epoch, e.train_loss, e.val.ssim, e.val.psnr)
    })?;
    let bytes = pipeline::generator_checkpoint(&trainer.store).encode();
    write_atomic(&dir.join("generator.vtac"), &bytes)?;
    write_atomic(&dir.join("generator.sha256"), format!("{}\n", sha256_hex(&bytes)).as_bytes())?;
    write_atomic(&dir.join("curve.tsv"), report::gen_tsv(&rep.epochs).as_bytes())?;
    let mut quality = String::new();
    if let Some(last) = rep.epochs.last() {
        quality.push_str(&report::quality_line("val", &last.val));
        quality.push('\n');
    }
    quality.push_str(&report::quality_line("test", &rep.test));
    quality.push('\n');
    write_atomic(&dir.join("quality.txt"), quality.as_bytes())?;
    eprint!("{quality}");
    Ok(dir)
}

fn load_generator(cfg: &Config, path: Option<&Path>) -> Result<Option<(VtGen, ParamStore<f32>, String)>> {
    let Some(path) = path else { return Ok(None) };
    let bytes = read(path)?;
    let (net, store) = pipeline::load_generator(cfg, &bytes).with_context(|| format!("loading {}", path.display()))?;
    Ok(Some((net, store, sha256_hex(&bytes))))
}

fn needs_generator(cfg: &Config) -> bool {
    cfg.agent.modality == Modality::VisualTactile && cfg.policy.touch == TouchMode::Generated
}

fn train_policy(cfg: &Config, root: &Path, generator: Option<&Path>) -> Result<PathBuf> {
    let gen = load_generator(cfg, generator)?;
    ensure!(!needs_generator(cfg) || gen.is_some(), "generated touch needs --generator");
    let dir = start(cfg, root, "train-policy")?;
    let gen_ref = gen.as_ref().map(|(n, s, _)| (n, s));
    let (agent, logs) = pipeline::train_policy(cfg, &cfg.agent, cfg.seed, gen_ref, |l| {
        eprintln!("episode {} step {} reward {:.2} success {}", l.episode, l.step, l.reward, l.success)
    })?;
    if let Some((_, store, hash)) = &gen {
        // The generator is frozen during policy training.
        let after = sha256_hex(&pipeline::generator_checkpoint(store).encode());
        ensure!(&after == hash, "generator parameters changed during policy training");
        write_atomic(&dir.join("generator.sha256"), format!("{hash}\n").as_bytes())?;
    }
    write_atomic(&dir.join("agent.vtac"), &agent.checkpoint().encode())?;
    write_atomic(&dir.join("curve.tsv"), report::curve_tsv(&logs).as_bytes())?;
    Ok(dir)
}

fn evaluate(cfg: &Config, root: &Path, agent: &Path, generator: Option<&Path>, episodes: Option<usize>) -> Result<PathBuf> {
    let gen = load_generator(cfg, generator)?;
    ensure!(!needs_generator(cfg) || gen.is_some(), "generated touch needs --generator");
    let mut policy = pipeline::agent_from_checkpoint(cfg, &read(agent)?)?;
    let dir = start(cfg, root, "evaluate")?;
    let gen_ref = gen.as_ref().map(|(n, s, _)| (n, s));
    let episodes = episodes.unwrap_or(cfg.eval.episodes);
    let rep = pipeline::evaluate_agent(cfg, &mut policy, gen_ref, episodes, cfg.eval.threshold)?;
    let tsv = dir.join("eval.tsv");
    write_atomic(&tsv, report::eval_tsv(&rep).as_bytes())?;
    let table = report::eval_table(&format!("{:?}", cfg.agent.fusion), &rep);
    write_atomic(&dir.join("eval.md"), table.as_bytes())?;
    let parsed = parse_eval_tsv(&String::from_utf8(read(&tsv)?)?)?;
    ensure!(parsed == rep.rows.len(), "report has {parsed} rows, expected {}", rep.rows.len());
    print!("{table}");
    Ok(dir)
}

/// Row count of an evaluation table, failing on any malformed line.
fn parse_eval_tsv(text: &str) -> Result<usize> {
    let mut lines = text.lines();
    ensure!(lines.next() == Some("seed\treward\tlength\tfinal_distance\tsuccess"), "bad header");
    let mut n = 0;
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        ensure!(f.len() == 5, "bad row `{line}`");
        f[0].parse::<u64>()?;
        f[1].parse::<f64>()?;
        f[2].parse::<usize>()?;
        f[3].parse::<f64>()?;
        ensure!(f[4] == "0" || f[4] == "1", "bad success flag `{}`", f[4]);
        n += 1;
    }
    Ok(n)
}

fn ablate(cfg: &Config, root: &Path, axis: Axis, generator: Option<&Path>) -> Result<PathBuf> {
    let gen = load_generator(cfg, generator)?;
    ensure!(!needs_generator(cfg) || gen.is_some(), "generated touch needs --generator");
    let (axis, name, title) = match axis {
        Axis::Fusion => (AblationAxis::Fusion, "ablate-fusion", "Fusion ablation"),
        Axis::Contrastive => (AblationAxis::Contrastive, "ablate-contrastive", "Contrastive ablation"),
    };
    let dir = start(cfg, root, name)?;
    let gen_ref = gen.as_ref().map(|(n, s, _)| (n, s));
    let rows = pipeline::ablate(cfg, axis, gen_ref, |variant, seed, log| match log {
        None => eprintln!("{variant} seed {seed}"),
        Some(l) => eprintln!("{variant} seed {seed} episode {} step {} success {}", l.episode, l.step, l.success),
    })?;
    let mut tsv = String::from("variant\ttrain_seed\tseed\treward\tlength\tfinal_distance\tsuccess\n");
    for r in &rows {
        for e in &r.report.rows {
            tsv.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.variant, r.seed, e.seed, e.reward, e.length, e.final_distance, e.success as u8
            ));
        }
    }
    write_atomic(&dir.join("ablation.tsv"), tsv.as_bytes())?;
    let table = report::ablation_table(title, cfg.ablation.threshold, &rows);
    write_atomic(&dir.join("ablation.md"), table.as_bytes())?;
    print!("{table}");
    Ok(dir)
}

fn render_dataset(
    cfg: &Config,
    root: &Path,
    data: &Path,
    generator: Option<&Path>,
    sequences: usize,
    steps: usize,
) -> Result<PathBuf> {
    let data = read_dataset(data)?;
    let gen = load_generator(cfg, generator)?;
    let dir = start(cfg, root, "render-dataset")?;
    let size = data.manifest.image_size;
    let stack = data.manifest.frame_stack;
    let columns = if gen.is_some() { 3 } else { 2 };
    for (seq, entry) in data.sequences.iter().zip(&data.manifest.sequence).take(sequences) {
        let t_max = seq.observations();
        if t_max == 0 {
            continue;
        }
        let picks: Vec<usize> = (0..steps.min(t_max)).map(|k| k * (t_max - 1) / steps.min(t_max).saturating_sub(1).max(1)).collect();
        let mut tiles = Vec::new();
        for &t in &picks {
            tiles.push(seq.frames[t].clone());
            let c = &seq.tactile[t];
            tiles.push(gray_tile(&c.values, c.rows, c.cols, size));
            if let Some((net, store, _)) = &gen {
                let mut input = Vec::new();
                seq.visual_stack_into(t, stack, &mut input);
                let out = net.predict(store, &[&input]).pop().expect("one prediction");
                tiles.push(gray_tile(&out.values, out.rows, out.cols, size));
            }
        }
        let (canvas, h, w) = grid(&tiles, columns, size);
        let name = format!("seq_{:05}_{:?}.ppm", entry.index, entry.split).to_lowercase();
        write_atomic(&dir.join(name), &ppm(&canvas, h, w))?;
    }
    Ok(dir)
}

fn gradcheck(cfg: &Config, root: &Path) -> Result<PathBuf> {
    let dir = start(cfg, root, "gradcheck")?;
    let mut all: Vec<GradCheck> = operator_suite(cfg.seed);
    all.push(composed_gradcheck(cfg.seed));
    all.extend(observation_gradchecks(cfg.seed).into_iter().map(|mut r| {
        r.name = format!("observation_{}", r.name.to_lowercase());
        r
    }));
    let mut tsv = String::from("check\tmax_rel_error\tchecked\tkinks\tpassed\n");
    for r in &all {
        tsv.push_str(&format!("{}\t{:.3e}\t{}\t{}\t{}\n", r.name, r.max_rel_error, r.checked, r.kinks, r.passed() as u8));
    }
    write_atomic(&dir.join("gradcheck.tsv"), tsv.as_bytes())?;
    print!("{tsv}");
    let failed: Vec<&str> = all.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        bail!("gradient checks failed: {}", failed.join(", "));
    }
    Ok(dir)
}
