/// Cosine annealing from `base` at unit 0 down to 0 at unit `total - 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub base: f64,
    pub total: usize,
}

impl CosineSchedule {
    pub fn new(base: f64, total: usize) -> Self {
        Self { base, total }
    }

    pub fn lr(&self, i: usize) -> f64 {
        if self.total <= 1 {
            return self.base;
        }
        let t = i.min(self.total - 1) as f64 / (self.total - 1) as f64;
        0.5 * self.base * (1.0 + (std::f64::consts::PI * t).cos())
    }
}
