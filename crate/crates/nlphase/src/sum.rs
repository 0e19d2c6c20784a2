//! Summation with an optional Neumaier correction term.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Summation {
    /// Plain left-to-right accumulation; bit-reproducible for a fixed order.
    FixedOrder,
    /// Neumaier compensated accumulation.
    #[default]
    Compensated,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Acc {
    mode: Summation,
    sum: f64,
    c: f64,
}

impl Acc {
    pub(crate) fn new(mode: Summation) -> Self {
        Acc { mode, sum: 0.0, c: 0.0 }
    }

    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        match self.mode {
            Summation::FixedOrder => self.sum += x,
            Summation::Compensated => {
                let t = self.sum + x;
                if self.sum.abs() >= x.abs() {
                    self.c += (self.sum - t) + x;
                } else {
                    self.c += (x - t) + self.sum;
                }
                self.sum = t;
            }
        }
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.c
    }
}

pub(crate) fn sum_with(mode: Summation, xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut a = Acc::new(mode);
    for x in xs {
        a.add(x);
    }
    a.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensation_recovers_lost_bits() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(sum_with(Summation::Compensated, xs), 2.0);
        assert_eq!(sum_with(Summation::FixedOrder, xs), 0.0);
    }
}
