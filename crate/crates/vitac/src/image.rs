//! Portable graymap and pixmap output.

/// Binary PGM of `values` in `[0, 1]`, row-major.
pub fn pgm(values: &[f32], rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(values.len(), rows * cols, "pgm size");
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Binary PPM from channel-major 8-bit RGB.
pub fn ppm(chw: &[u8], rows: usize, cols: usize) -> Vec<u8> {
    let n = rows * cols;
    assert_eq!(chw.len(), 3 * n, "ppm size");
    let mut out = format!("P6\n{cols} {rows}\n255\n").into_bytes();
    for i in 0..n {
        out.extend([chw[i], chw[n + i], chw[2 * n + i]]);
    }
    out
}

/// Nearest-neighbour upsampling of a `[0, 1]` map to a `size`x`size`
/// grayscale tile in CHW RGB.
pub fn gray_tile(values: &[f32], rows: usize, cols: usize, size: usize) -> Vec<u8> {
    assert_eq!(values.len(), rows * cols, "tile size");
    let plane: Vec<u8> = (0..size * size)
        .map(|i| {
            let (y, x) = (i / size * rows / size, i % size * cols / size);
            (values[y * cols + x].clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    plane.repeat(3)
}

/// Lays equal square CHW tiles out row by row, `per_row` to a row, with a
/// one-pixel white gutter. Returns the CHW canvas and its height and width.
pub fn grid(tiles: &[Vec<u8>], per_row: usize, size: usize) -> (Vec<u8>, usize, usize) {
    let rows = tiles.len().div_ceil(per_row.max(1));
    let (h, w) = (rows * (size + 1) + 1, per_row * (size + 1) + 1);
    let mut out = vec![255u8; 3 * h * w];
    for (i, t) in tiles.iter().enumerate() {
        assert_eq!(t.len(), 3 * size * size, "tile size");
        let (oy, ox) = (i / per_row * (size + 1) + 1, i % per_row * (size + 1) + 1);
        for c in 0..3 {
            for y in 0..size {
                let src = &t[(c * size + y) * size..][..size];
                out[(c * h + oy + y) * w + ox..][..size].copy_from_slice(src);
            }
        }
    }
    (out, h, w)
}
