//! FIFO replay with shared, 8-bit frame storage.
//!
//! Each environment step contributes one visual and one tactile frame.
//! Transitions refer to frames by id, so consecutive stacks share storage.
//! Frames are dropped once no surviving transition can refer to them.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::Rng;

use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// CHW RGB, quantized.
    pub visual: Vec<u8>,
    /// Contact depth at sensor resolution, quantized.
    pub tactile: Vec<u8>,
}

/// Frame ids making up one observation, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct StackRef {
    pub visual: Vec<u64>,
    pub tactile: Vec<u64>,
    pub proprio: [f32; 5],
}

impl StackRef {
    fn min_id(&self) -> u64 {
        self.visual.iter().chain(&self.tactile).copied().min().unwrap_or(u64::MAX)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Insertion index over the buffer's lifetime.
    pub id: u64,
    pub obs: StackRef,
    /// Normalized action in `[-1, 1]^2`.
    pub action: [f32; 2],
    pub reward: f32,
    pub next: StackRef,
    /// True only for terminal states; truncation still bootstraps.
    pub done: bool,
}

pub trait FrameSource {
    fn frame(&self, id: u64) -> &Frame;
}

pub trait FrameSink {
    /// Stores a frame and returns its id.
    fn push_frame(&mut self, frame: Frame) -> u64;
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    transitions: VecDeque<Transition>,
    frames: VecDeque<Frame>,
    frame_base: u64,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, transitions: VecDeque::new(), frames: VecDeque::new(), frame_base: 0, inserted: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn stored_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn push(&mut self, obs: StackRef, action: [f32; 2], reward: f32, next: StackRef, done: bool) -> u64 {
        let id = self.inserted;
        self.inserted += 1;
        self.transitions.push_back(Transition { id, obs, action, reward, next, done });
        while self.transitions.len() > self.capacity {
            self.transitions.pop_front();
        }
        if let Some(front) = self.transitions.front() {
            let keep_from = front.obs.min_id().min(front.next.min_id());
            while self.frame_base < keep_from && !self.frames.is_empty() {
                self.frames.pop_front();
                self.frame_base += 1;
            }
        }
        id
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.transitions[index]
    }

    pub fn oldest(&self) -> Option<&Transition> {
        self.transitions.front()
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&self, rng: &mut SimRng, batch: usize) -> Vec<usize> {
        assert!(!self.is_empty(), "sampling from an empty buffer");
        (0..batch).map(|_| rng.random_range(0..self.transitions.len())).collect()
    }
}

impl FrameSink for ReplayBuffer {
    fn push_frame(&mut self, frame: Frame) -> u64 {
        self.frames.push_back(frame);
        self.frame_base + self.frames.len() as u64 - 1
    }
}

impl FrameSource for ReplayBuffer {
    fn frame(&self, id: u64) -> &Frame {
        assert!(id >= self.frame_base, "frame {id} was evicted");
        &self.frames[(id - self.frame_base) as usize]
    }
}

/// Frames of a single episode, for acting outside training.
#[derive(Clone, Debug, Default)]
pub struct EpisodeFrames {
    frames: Vec<Frame>,
}

impl EpisodeFrames {
    pub fn clear(&mut self) {
        self.frames.clear();
    }

}

impl FrameSink for EpisodeFrames {
    fn push_frame(&mut self, frame: Frame) -> u64 {
        self.frames.push(frame);
        self.frames.len() as u64 - 1
    }
}

impl FrameSource for EpisodeFrames {
    fn frame(&self, id: u64) -> &Frame {
        &self.frames[id as usize]
    }
}

/// Ids of the last `n` frames of an episode, padded with its first frame.
pub fn stack_ids(history: &[u64], n: usize) -> Vec<u64> {
    assert!(!history.is_empty(), "empty frame history");
    let len = history.len();
    (0..n).map(|k| history[(len + k).saturating_sub(n)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn frame(v: u8) -> Frame {
        Frame { visual: vec![v; 4], tactile: vec![v; 1] }
    }

    fn stack(ids: &[u64]) -> StackRef {
        StackRef { visual: ids.to_vec(), tactile: ids.to_vec(), proprio: [0.0; 5] }
    }

    #[test]
    fn stack_ids_pad_with_the_first_frame() {
        assert_eq!(stack_ids(&[7], 3), vec![7, 7, 7]);
        assert_eq!(stack_ids(&[7, 8], 3), vec![7, 7, 8]);
        assert_eq!(stack_ids(&[7, 8, 9, 10], 3), vec![8, 9, 10]);
    }

    proptest! {
        #[test]
        fn fifo_keeps_the_newest_and_their_frames(capacity in 1usize..40, extra in 0usize..60, episode in 1usize..9) {
            let mut buf = ReplayBuffer::new(capacity);
            let mut history = Vec::new();
            history.push(buf.push_frame(frame(0)));
            let total = capacity + extra;
            for i in 0..total {
                let obs = stack(&stack_ids(&history, 3));
                history.push(buf.push_frame(frame((i + 1) as u8)));
                let next = stack(&stack_ids(&history, 3));
                buf.push(obs, [0.0; 2], i as f32, next, false);
                if (i + 1) % episode == 0 {
                    history.clear();
                    history.push(buf.push_frame(frame(0)));
                }
                prop_assert!(buf.len() <= capacity);
            }
            prop_assert_eq!(buf.len(), capacity);
            prop_assert_eq!(buf.oldest().unwrap().id, extra as u64);
            for k in 0..buf.len() {
                let t = buf.get(k);
                prop_assert_eq!(t.reward, t.id as f32);
                for &f in t.obs.visual.iter().chain(&t.next.visual) {
                    let _ = buf.frame(f);
                }
            }
            // Storage stays proportional to the live transitions.
            prop_assert!(buf.stored_frames() <= 2 * capacity + 4);
        }
    }
}
