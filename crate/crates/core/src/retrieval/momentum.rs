use std::collections::VecDeque;

use super::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::numcore::layers::Parameterized;
use crate::numcore::Tensor;

/// Bounded FIFO of embedding rows; the oldest row is evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingQueue {
    capacity: usize,
    dim: usize,
    rows: VecDeque<Vec<f64>>,
}

impl EmbeddingQueue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self { capacity, dim, rows: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::shape(format!("queue row of width {}, expected {}", row.len(), self.dim)));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.rows.len() == self.capacity {
            self.rows.pop_front();
        }
        self.rows.push_back(row.to_vec());
        Ok(())
    }

    /// Enqueues every row of `m` in order.
    pub fn extend(&mut self, m: &Tensor) -> Result<()> {
        (0..m.rows()).try_for_each(|r| self.push(m.row(r)))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// Contents oldest-first as a `len × dim` matrix, or `None` when empty.
    pub fn matrix(&self) -> Option<Tensor> {
        if self.rows.is_empty() {
            return None;
        }
        let data = self.rows.iter().flatten().copied().collect();
        Some(Tensor::matrix(self.rows.len(), self.dim, data).expect("queue shape"))
    }
}

/// `θ′ ← μ·θ′ + (1−μ)·θ` over matching parameter lists.
pub fn ema_update(teacher: &mut dyn Parameterized, student: &dyn Parameterized, mu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::invalid(format!("momentum must lie in [0, 1], got {mu}")));
    }
    if teacher.shapes() != student.shapes() {
        return Err(Error::shape("teacher and student parameter layouts differ"));
    }
    let theta = student.flatten();
    let mut k = 0;
    teacher.visit_mut("", &mut |_, t| {
        for v in t.data_mut() {
            *v = mu * *v + (1.0 - mu) * theta.data()[k];
            k += 1;
        }
    });
    Ok(())
}

/// EMA teacher plus the audio and motion queues of its embeddings.
#[derive(Debug, Clone)]
pub struct MomentumState {
    pub teacher: EncoderParams,
    pub mu: f64,
    pub audio_queue: EmbeddingQueue,
    pub motion_queue: EmbeddingQueue,
}

impl MomentumState {
    pub fn new(student: &EncoderParams, mu: f64, capacity: usize) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::invalid(format!("momentum must lie in (0, 1), got {mu}")));
        }
        let d = student.dim();
        Ok(Self {
            teacher: student.clone(),
            mu,
            audio_queue: EmbeddingQueue::new(capacity, d),
            motion_queue: EmbeddingQueue::new(capacity, d),
        })
    }

    pub fn update_teacher(&mut self, student: &EncoderParams) -> Result<()> {
        ema_update(&mut self.teacher, student, self.mu)
    }

    /// Pushes a batch of teacher embeddings (`B × D` each).
    pub fn enqueue(&mut self, audio: &Tensor, motion: &Tensor) -> Result<()> {
        self.audio_queue.extend(audio)?;
        self.motion_queue.extend(motion)
    }
}
