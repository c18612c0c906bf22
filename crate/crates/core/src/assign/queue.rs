use std::collections::VecDeque;

use super::{AssignError, LogitBatch};
use crate::gradcore::Tensor;

/// FIFO buffer of past detached logit rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitQueue {
    capacity: usize,
    width: usize,
    rows: VecDeque<Vec<f64>>,
}

impl LogitQueue {
    pub fn new(capacity: usize, width: usize) -> Self {
        Self { capacity, width, rows: VecDeque::with_capacity(capacity) }
    }

    pub fn disabled(width: usize) -> Self {
        Self::new(0, width)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    /// Appends every row of `batch`, evicting the oldest rows past capacity.
    pub fn push(&mut self, batch: &LogitBatch) -> Result<(), AssignError> {
        if batch.num_prototypes() != self.width {
            return Err(AssignError::Width { expected: self.width, got: batch.num_prototypes() });
        }
        if self.capacity == 0 {
            return Ok(());
        }
        for i in 0..batch.batch_size() {
            self.rows.push_back(batch.values().row(i).to_vec());
            if self.rows.len() > self.capacity {
                self.rows.pop_front();
            }
        }
        Ok(())
    }

    /// Stored rows, oldest first, as a `len × width` matrix.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.rows.iter().flatten().copied().collect();
        Tensor::matrix(self.rows.len(), self.width, data)
    }

    /// Rebuilds a queue from a stored matrix (checkpoint restore).
    pub fn from_tensor(capacity: usize, width: usize, rows: &Tensor) -> Result<Self, AssignError> {
        if rows.rows() > capacity || (rows.rows() > 0 && rows.cols() != width) {
            return Err(AssignError::Config("stored queue does not fit its capacity/width".into()));
        }
        let mut q = Self::new(capacity, width);
        for i in 0..rows.rows() {
            q.rows.push_back(rows.row(i).to_vec());
        }
        Ok(q)
    }
}
