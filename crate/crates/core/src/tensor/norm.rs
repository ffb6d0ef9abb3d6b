use super::tape::{Tape, Var};
use super::{Result, TensorError};

/// Variance guard inside the square root.
pub const BN_EPS: f64 = 1e-5;
/// Weight given to the newest batch when updating running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-column batch mean and population variance observed in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Exponential moving averages used in eval mode. Unset until the first
/// train-mode update (or an explicit [`RunningStats::set`]).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    width: usize,
    stats: Option<BatchStats>,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        Self { width, stats: None }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self) -> Option<&BatchStats> {
        self.stats.as_ref()
    }

    pub fn is_set(&self) -> bool {
        self.stats.is_some()
    }

    pub fn set(&mut self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        if mean.len() != self.width || var.len() != self.width {
            return Err(TensorError::Shape {
                op: "running_stats",
                left: (1, self.width),
                right: (mean.len(), var.len()),
            });
        }
        self.stats = Some(BatchStats { mean, var });
        Ok(())
    }

    pub fn clear(&mut self) {
        self.stats = None;
    }

    /// Folds a batch into the running averages. The first batch initializes
    /// them directly.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        match &mut self.stats {
            None => self.stats = Some(batch.clone()),
            Some(run) => {
                for (r, b) in run.mean.iter_mut().zip(&batch.mean) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
                for (r, b) in run.var.iter_mut().zip(&batch.var) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
            }
        }
    }
}

impl Tape {
    /// Train-mode batch normalization over rows; returns the output and the
    /// batch statistics without touching any running state.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, BatchStats)> {
        let (out, mean, var) = self.batch_norm_train_raw(x, gamma, beta, BN_EPS)?;
        Ok((out, BatchStats { mean, var }))
    }

    /// Eval-mode batch normalization using fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
    ) -> Result<Var> {
        let stats = running.get().ok_or(TensorError::MissingRunningStats)?;
        self.batch_norm_eval_raw(x, gamma, beta, &stats.mean, &stats.var, BN_EPS)
    }
}

/// Batch normalization that also maintains `running` in train mode.
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    mode: BnMode,
    running: &mut RunningStats,
    momentum: f64,
) -> Result<Var> {
    match mode {
        BnMode::Train => {
            let (out, stats) = tape.batch_norm_train(x, gamma, beta)?;
            running.update(&stats, momentum);
            Ok(out)
        }
        BnMode::Eval => tape.batch_norm_eval(x, gamma, beta, running),
    }
}
