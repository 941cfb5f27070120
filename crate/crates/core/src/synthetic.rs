//! Seeded synthetic markets for tests, demos and the acceptance suite.
//!
//! Existing assets follow a one-factor model (correlated random walks);
//! extended assets are independent of the factor, and one of them can be
//! given a strong positive drift.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::PricePanel;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_existing: usize,
    pub n_extended: usize,
    pub days: usize,
    pub start: NaiveDate,
    pub existing_drift: f64,
    pub factor_vol: f64,
    pub idio_vol: f64,
    pub extended_vol: f64,
    /// Index and `(drift, vol)` of the extended asset that dominates.
    pub dominant: Option<(usize, f64, f64)>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_existing: 18,
            n_extended: 5,
            days: 400,
            start: NaiveDate::from_ymd_opt(2011, 1, 3).expect("valid date"),
            existing_drift: 0.0,
            factor_vol: 0.01,
            idio_vol: 0.01,
            extended_vol: 0.01,
            dominant: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub existing: PricePanel,
    pub extended: PricePanel,
    /// Daily returns actually drawn, `[days - 1][asset]`, existing then extended.
    pub drawn_returns: Vec<Vec<f64>>,
}

/// Consecutive weekdays starting at `start`.
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

struct Builder {
    open: Vec<f64>,
    high: Vec<f64>,
    low: Vec<f64>,
    close: Vec<f64>,
    volume: Vec<f64>,
}

impl SyntheticSpec {
    pub fn generate(&self, seed: u64) -> SyntheticMarket {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
        let dates = business_days(self.start, self.days);
        let total = self.n_existing + self.n_extended;

        let mut drawn = Vec::with_capacity(self.days.saturating_sub(1));
        for _ in 1..self.days {
            let f = self.factor_vol * std_normal.sample(&mut rng);
            let mut row = Vec::with_capacity(total);
            for _ in 0..self.n_existing {
                row.push(self.existing_drift + f + self.idio_vol * std_normal.sample(&mut rng));
            }
            for j in 0..self.n_extended {
                let (mu, sd) = match self.dominant {
                    Some((k, mu, sd)) if k == j => (mu, sd),
                    _ => (0.0, self.extended_vol),
                };
                row.push(mu + sd * std_normal.sample(&mut rng));
            }
            for r in &mut row {
                *r = r.max(-0.5);
            }
            drawn.push(row);
        }

        let mut builders: Vec<Builder> = (0..2)
            .map(|_| Builder {
                open: Vec::new(),
                high: Vec::new(),
                low: Vec::new(),
                close: Vec::new(),
                volume: Vec::new(),
            })
            .collect();
        let mut last_close: Vec<f64> = (0..total).map(|i| 50.0 + 10.0 * i as f64).collect();
        for t in 0..self.days {
            for a in 0..total {
                let prev = last_close[a];
                let close = if t == 0 { prev } else { prev * (1.0 + drawn[t - 1][a]) };
                let open = prev * (1.0 + 0.002 * std_normal.sample(&mut rng));
                let high = open.max(close) * (1.0 + 0.004 * std_normal.sample(&mut rng).abs());
                let low = open.min(close) * (1.0 - 0.004 * std_normal.sample(&mut rng).abs());
                let volume = (1e6 * (0.3 * std_normal.sample(&mut rng)).exp()).round();
                let b = &mut builders[usize::from(a >= self.n_existing)];
                b.open.push(open);
                b.high.push(high);
                b.low.push(low);
                b.close.push(close);
                b.volume.push(volume);
                last_close[a] = close;
            }
        }
        let ext_b = builders.pop().expect("two builders");
        let ex_b = builders.pop().expect("two builders");
        let panel = |b: Builder, names: Vec<String>| {
            PricePanel::new(dates.clone(), names, b.open, b.high, b.low, b.close, b.volume)
                .expect("synthetic panel satisfies invariants")
        };
        SyntheticMarket {
            existing: panel(ex_b, (0..self.n_existing).map(|i| format!("S{i:02}")).collect()),
            extended: panel(ext_b, (0..self.n_extended).map(|i| format!("X{i}")).collect()),
            drawn_returns: drawn,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::compute_returns;

    #[test]
    fn deterministic_and_consistent() {
        let spec = SyntheticSpec {
            days: 50,
            dominant: Some((2, 0.003, 0.005)),
            ..SyntheticSpec::default()
        };
        let a = spec.generate(7);
        let b = spec.generate(7);
        assert_eq!(a.existing, b.existing);
        assert_eq!(a.existing.len(), 50);
        assert_eq!(a.extended.n_assets(), 5);
        let r = compute_returns(&a.extended).unwrap();
        for t in 0..49 {
            assert!((r.at(t, 2) - a.drawn_returns[t][20]).abs() < 1e-12);
        }
        assert!(a.existing.dates.iter().all(|d| d.weekday().num_days_from_monday() < 5));
    }
}
