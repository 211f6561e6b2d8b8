/// Validation losses must drop by more than this to count as progress.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-4;

/// Halves the learning rate once validation loss has not improved for more
/// than `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct ReduceOnPlateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl ReduceOnPlateau {
    pub fn new(lr: f64) -> Self {
        ReduceOnPlateau {
            lr,
            factor: 0.5,
            patience: 10,
            min_lr: 1e-6,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's validation loss and returns the learning rate to use next.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - IMPROVEMENT_THRESHOLD {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.lr = (self.lr * self.factor).max(self.min_lr);
            self.bad_epochs = 0;
        }
        self.lr
    }
}

/// Outcome of one [`EarlyStopping::update`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Stops after `patience` epochs without improvement, never before `min_epochs`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_epochs: usize,
    best: f64,
    best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_epochs: usize) -> Self {
        EarlyStopping {
            patience,
            min_epochs,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// `epoch` counts from 1.
    pub fn update(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = val_loss < self.best - IMPROVEMENT_THRESHOLD;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        StopDecision {
            improved,
            stop: epoch >= self.min_epochs && self.bad_epochs >= self.patience,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}
