//! Technical indicators over close (and high/low) series, plus the rolling
//! return covariance used in the state.
//!
//! Parameter conventions: SMA 30/60, MACD 12/26 with EMA seeded by the first
//! value, Bollinger 20 / 2 population sigma, RSI 14 and ADX 14 with Wilder
//! smoothing, CCI 20 with the 0.015 constant. Flat windows map to RSI 50,
//! CCI 0 and DX 0 so that no NaN reaches the networks.

use thiserror::Error;

use crate::data::{PricePanel, ReturnPanel};

pub const SMA_SHORT: usize = 30;
pub const SMA_LONG: usize = 60;
pub const MACD_FAST: usize = 12;
pub const MACD_SLOW: usize = 26;
pub const BOLLINGER_WINDOW: usize = 20;
pub const BOLLINGER_K: f64 = 2.0;
pub const RSI_WINDOW: usize = 14;
pub const CCI_WINDOW: usize = 20;
pub const CCI_CONSTANT: f64 = 0.015;
pub const ADX_WINDOW: usize = 14;
pub const COVARIANCE_WINDOW: usize = 60;

/// Number of indicator values per asset in the state.
pub const INDICATORS_PER_ASSET: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum IndicatorError {
    #[error("series too short: {len} values, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("invalid window {0}")]
    InvalidWindow(usize),
}

pub type Result<T, E = IndicatorError> = std::result::Result<T, E>;

fn need(len: usize, needed: usize) -> Result<()> {
    if len < needed {
        Err(IndicatorError::TooShort { len, needed })
    } else {
        Ok(())
    }
}

/// An indicator aligned to its input, undefined before `defined_from`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    values: Vec<f64>,
    defined_from: usize,
}

impl Series {
    fn new(values: Vec<f64>, defined_from: usize) -> Self {
        Self {
            values,
            defined_from,
        }
    }

    pub fn get(&self, t: usize) -> Option<f64> {
        (t >= self.defined_from).then(|| self.values[t])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn defined_from(&self) -> usize {
        self.defined_from
    }

    /// The defined tail of the series.
    pub fn defined(&self) -> &[f64] {
        &self.values[self.defined_from..]
    }
}

pub fn sma(close: &[f64], window: usize) -> Result<Series> {
    if window == 0 {
        return Err(IndicatorError::InvalidWindow(window));
    }
    need(close.len(), window)?;
    let mut out = vec![f64::NAN; close.len()];
    for t in window - 1..close.len() {
        out[t] = close[t + 1 - window..=t].iter().sum::<f64>() / window as f64;
    }
    Ok(Series::new(out, window - 1))
}

/// EMA seeded with the first value, smoothing `2 / (span + 1)`.
pub fn ema(close: &[f64], span: usize) -> Vec<f64> {
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(close.len());
    let mut e = match close.first() {
        Some(&x) => x,
        None => return out,
    };
    for &x in close {
        e = alpha * x + (1.0 - alpha) * e;
        out.push(e);
    }
    out
}

pub fn macd(close: &[f64]) -> Result<Series> {
    need(close.len(), MACD_SLOW)?;
    let fast = ema(close, MACD_FAST);
    let slow = ema(close, MACD_SLOW);
    let out = fast.iter().zip(&slow).map(|(f, s)| f - s).collect();
    Ok(Series::new(out, MACD_SLOW - 1))
}

pub struct Bands {
    pub upper: Series,
    pub middle: Series,
    pub lower: Series,
}

pub fn bollinger(close: &[f64], window: usize, k: f64) -> Result<Bands> {
    if window < 2 {
        return Err(IndicatorError::InvalidWindow(window));
    }
    let middle = sma(close, window)?;
    let mut upper = vec![f64::NAN; close.len()];
    let mut lower = vec![f64::NAN; close.len()];
    for t in window - 1..close.len() {
        let m = middle.values[t];
        let var = close[t + 1 - window..=t]
            .iter()
            .map(|x| (x - m) * (x - m))
            .sum::<f64>()
            / window as f64;
        let sd = var.sqrt();
        upper[t] = m + k * sd;
        lower[t] = m - k * sd;
    }
    Ok(Bands {
        upper: Series::new(upper, window - 1),
        lower: Series::new(lower, window - 1),
        middle,
    })
}

fn rsi_from(avg_gain: f64, avg_loss: f64) -> f64 {
    match (avg_gain > 0.0, avg_loss > 0.0) {
        (false, false) => 50.0,
        (_, false) => 100.0,
        (false, true) => 0.0,
        (true, true) => 100.0 - 100.0 / (1.0 + avg_gain / avg_loss),
    }
}

pub fn rsi(close: &[f64], window: usize) -> Result<Series> {
    if window == 0 {
        return Err(IndicatorError::InvalidWindow(window));
    }
    need(close.len(), window + 1)?;
    let mut out = vec![f64::NAN; close.len()];
    let (mut gain, mut loss) = (0.0, 0.0);
    for t in 1..=window {
        let d = close[t] - close[t - 1];
        gain += d.max(0.0);
        loss += (-d).max(0.0);
    }
    let w = window as f64;
    gain /= w;
    loss /= w;
    out[window] = rsi_from(gain, loss);
    for t in window + 1..close.len() {
        let d = close[t] - close[t - 1];
        gain = (gain * (w - 1.0) + d.max(0.0)) / w;
        loss = (loss * (w - 1.0) + (-d).max(0.0)) / w;
        out[t] = rsi_from(gain, loss);
    }
    Ok(Series::new(out, window))
}

pub fn cci(high: &[f64], low: &[f64], close: &[f64], window: usize) -> Result<Series> {
    if window == 0 {
        return Err(IndicatorError::InvalidWindow(window));
    }
    need(close.len().min(high.len()).min(low.len()), window)?;
    let tp: Vec<f64> = (0..close.len())
        .map(|t| (high[t] + low[t] + close[t]) / 3.0)
        .collect();
    let mut out = vec![f64::NAN; close.len()];
    for t in window - 1..close.len() {
        let win = &tp[t + 1 - window..=t];
        let m = win.iter().sum::<f64>() / window as f64;
        let mad = win.iter().map(|x| (x - m).abs()).sum::<f64>() / window as f64;
        // relative threshold keeps the flat-window rule scale invariant
        out[t] = if mad <= 1e-12 * m.abs().max(f64::MIN_POSITIVE) {
            0.0
        } else {
            (tp[t] - m) / (CCI_CONSTANT * mad)
        };
    }
    Ok(Series::new(out, window - 1))
}

pub fn adx(high: &[f64], low: &[f64], close: &[f64], window: usize) -> Result<Series> {
    if window == 0 {
        return Err(IndicatorError::InvalidWindow(window));
    }
    let len = close.len().min(high.len()).min(low.len());
    need(len, 2 * window)?;
    let w = window as f64;
    let mut tr = vec![0.0; len];
    let mut plus_dm = vec![0.0; len];
    let mut minus_dm = vec![0.0; len];
    for t in 1..len {
        let up = high[t] - high[t - 1];
        let down = low[t - 1] - low[t];
        plus_dm[t] = if up > down && up > 0.0 { up } else { 0.0 };
        minus_dm[t] = if down > up && down > 0.0 { down } else { 0.0 };
        tr[t] = (high[t] - low[t])
            .max((high[t] - close[t - 1]).abs())
            .max((low[t] - close[t - 1]).abs());
    }
    let mut s_tr: f64 = tr[1..=window].iter().sum();
    let mut s_plus: f64 = plus_dm[1..=window].iter().sum();
    let mut s_minus: f64 = minus_dm[1..=window].iter().sum();
    let dx_at = |s_tr: f64, s_plus: f64, s_minus: f64| {
        let (di_p, di_m) = if s_tr > 0.0 {
            (100.0 * s_plus / s_tr, 100.0 * s_minus / s_tr)
        } else {
            (0.0, 0.0)
        };
        let sum = di_p + di_m;
        if sum > 0.0 {
            100.0 * (di_p - di_m).abs() / sum
        } else {
            0.0
        }
    };
    let mut dx = vec![0.0; len];
    dx[window] = dx_at(s_tr, s_plus, s_minus);
    for t in window + 1..len {
        s_tr = s_tr - s_tr / w + tr[t];
        s_plus = s_plus - s_plus / w + plus_dm[t];
        s_minus = s_minus - s_minus / w + minus_dm[t];
        dx[t] = dx_at(s_tr, s_plus, s_minus);
    }
    let first = 2 * window - 1;
    let mut out = vec![f64::NAN; len];
    let mut a = dx[window..=first].iter().sum::<f64>() / w;
    out[first] = a;
    for t in first + 1..len {
        a = (a * (w - 1.0) + dx[t]) / w;
        out[t] = a;
    }
    Ok(Series::new(out, first))
}

/// Symmetric `n x n` covariance of the return rows `[t - window, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceWindow {
    pub n: usize,
    pub window: usize,
    /// Row-major `n x n`.
    pub matrix: Vec<f64>,
}

impl CovarianceWindow {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    /// Upper triangle including the diagonal, row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n + 1) / 2);
        for i in 0..self.n {
            for j in i..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

/// Sample covariance (divisor `window - 1`) of the `window` return rows ending
/// just before row `t`. Accumulated with running centered co-moments over the
/// window, recomputed from scratch for each `t`.
pub fn rolling_covariance(returns: &ReturnPanel, window: usize, t: usize) -> Result<CovarianceWindow> {
    if window < 2 {
        return Err(IndicatorError::InvalidWindow(window));
    }
    if t < window || t > returns.len() {
        return Err(IndicatorError::TooShort {
            len: t.min(returns.len()),
            needed: window,
        });
    }
    let n = returns.n_assets();
    let mut means = vec![0.0; n];
    let mut comoment = vec![0.0; n * n];
    let mut delta = vec![0.0; n];
    for (k, row_idx) in (t - window..t).enumerate() {
        let row = returns.row(row_idx);
        let count = (k + 1) as f64;
        for i in 0..n {
            delta[i] = row[i] - means[i];
            means[i] += delta[i] / count;
        }
        for i in 0..n {
            let after_i = row[i] - means[i];
            for j in i..n {
                comoment[i * n + j] += after_i * delta[j];
            }
        }
    }
    let denom = (window - 1) as f64;
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let c = comoment[i * n + j] / denom;
            matrix[i * n + j] = c;
            matrix[j * n + i] = c;
        }
    }
    Ok(CovarianceWindow { n, window, matrix })
}

/// The eight state indicators for one asset.
#[derive(Debug, Clone)]
pub struct AssetIndicators {
    pub sma30: Series,
    pub sma60: Series,
    pub macd: Series,
    pub boll_upper: Series,
    pub boll_lower: Series,
    pub rsi: Series,
    pub cci: Series,
    pub adx: Series,
}

impl AssetIndicators {
    pub fn compute(high: &[f64], low: &[f64], close: &[f64]) -> Result<Self> {
        let bands = bollinger(close, BOLLINGER_WINDOW, BOLLINGER_K)?;
        Ok(Self {
            sma30: sma(close, SMA_SHORT)?,
            sma60: sma(close, SMA_LONG)?,
            macd: macd(close)?,
            boll_upper: bands.upper,
            boll_lower: bands.lower,
            rsi: rsi(close, RSI_WINDOW)?,
            cci: cci(high, low, close, CCI_WINDOW)?,
            adx: adx(high, low, close, ADX_WINDOW)?,
        })
    }

    fn all(&self) -> [&Series; INDICATORS_PER_ASSET] {
        [
            &self.sma30,
            &self.sma60,
            &self.macd,
            &self.boll_upper,
            &self.boll_lower,
            &self.rsi,
            &self.cci,
            &self.adx,
        ]
    }

    pub fn defined_from(&self) -> usize {
        self.all().iter().map(|s| s.defined_from()).max().unwrap_or(0)
    }

    /// Indicator values at `t`, in state order. `None` before warm-up.
    pub fn at(&self, t: usize) -> Option<[f64; INDICATORS_PER_ASSET]> {
        let mut out = [0.0; INDICATORS_PER_ASSET];
        for (slot, s) in out.iter_mut().zip(self.all()) {
            *slot = s.get(t)?;
        }
        Some(out)
    }
}

/// Indicators for every asset of a panel.
#[derive(Debug, Clone)]
pub struct IndicatorBlock {
    pub per_asset: Vec<AssetIndicators>,
    pub defined_from: usize,
}

impl IndicatorBlock {
    pub fn compute(panel: &PricePanel) -> Result<Self> {
        let per_asset: Vec<AssetIndicators> = (0..panel.n_assets())
            .map(|i| {
                AssetIndicators::compute(
                    &panel.high_series(i),
                    &panel.low_series(i),
                    &panel.close_series(i),
                )
            })
            .collect::<Result<_>>()?;
        let defined_from = per_asset.iter().map(|a| a.defined_from()).max().unwrap_or(0);
        Ok(Self {
            per_asset,
            defined_from,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close_enough(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn sma_examples() {
        let s = sma(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(s.get(0), None);
        assert_eq!(s.defined(), &[1.5, 2.5, 3.5]);
        let x = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(sma(&x, 1).unwrap().defined(), &x);
        assert!(sma(&[7.0; 10], 4).unwrap().defined().iter().all(|&v| v == 7.0));
        assert_eq!(
            sma(&[1.0, 2.0], 3),
            Err(IndicatorError::TooShort { len: 2, needed: 3 })
        );
    }

    /// Straightforward EMA recursion used as a reference.
    fn ema_oracle(x: &[f64], span: usize) -> Vec<f64> {
        let a = 2.0 / (span as f64 + 1.0);
        let mut out = vec![x[0]];
        for k in 1..x.len() {
            let prev = out[k - 1];
            out.push(prev + a * (x[k] - prev));
        }
        out
    }

    #[test]
    fn macd_examples() {
        assert!(macd(&[5.0; 40]).unwrap().defined().iter().all(|&v| v.abs() < 1e-12));
        let lin: Vec<f64> = (0..80).map(|k| 10.0 + k as f64).collect();
        let m = macd(&lin).unwrap();
        let (f, s) = (ema_oracle(&lin, 12), ema_oracle(&lin, 26));
        for t in m.defined_from()..lin.len() {
            assert!(m.get(t).unwrap() > 0.0);
            assert!(close_enough(m.get(t).unwrap(), f[t] - s[t], 1e-12));
        }
        // step up then step down: MACD turns negative within 26 steps of the drop
        let mut step = vec![10.0; 40];
        step.extend(vec![20.0; 40]);
        step.extend(vec![5.0; 40]);
        let m = macd(&step).unwrap();
        assert!(m.get(79).unwrap() > 0.0);
        assert!((80..80 + 26).any(|t| m.get(t).unwrap() < 0.0));
    }

    #[test]
    fn bollinger_examples() {
        let b = bollinger(&[4.0; 30], 20, 2.0).unwrap();
        assert!(b.upper.defined().iter().all(|&v| (v - 4.0).abs() < 1e-12));
        assert!(b.lower.defined().iter().all(|&v| (v - 4.0).abs() < 1e-12));
        let alt: Vec<f64> = (0..10).map(|k| if k % 2 == 0 { 1.0 } else { 3.0 }).collect();
        let b = bollinger(&alt, 2, 2.0).unwrap();
        // window {1,3}: mean 2, population sigma 1
        for t in 1..alt.len() {
            assert!((b.upper.get(t).unwrap() - 4.0).abs() < 1e-12);
            assert!(b.lower.get(t).unwrap().abs() < 1e-12);
        }
        let x: Vec<f64> = (0..30).map(|k| (k as f64 * 0.7).sin() + 5.0).collect();
        let b = bollinger(&x, 20, 0.0).unwrap();
        assert_eq!(b.upper.defined(), b.middle.defined());
        assert_eq!(b.lower.defined(), b.middle.defined());
    }

    #[test]
    fn rsi_examples() {
        let up: Vec<f64> = (0..30).map(|k| 1.0 + k as f64).collect();
        assert!(rsi(&up, 14).unwrap().defined().iter().all(|&v| v == 100.0));
        let down: Vec<f64> = up.iter().rev().copied().collect();
        assert!(rsi(&down, 14).unwrap().defined().iter().all(|&v| v == 0.0));
        assert!(rsi(&[2.0; 30], 14).unwrap().defined().iter().all(|&v| v == 50.0));
    }

    #[test]
    fn cci_examples() {
        let flat = [3.0; 25];
        assert!(cci(&flat, &flat, &flat, 20).unwrap().defined().iter().all(|&v| v == 0.0));
        let tp = [1.0, 1.0, 1.0, 2.0];
        let c = cci(&tp, &tp, &tp, 4).unwrap();
        // mean 1.25, numerator 0.75, MAD (3 * 0.25 + 0.75) / 4 = 0.375
        let expected = 0.75 / (0.015 * 0.375);
        assert!(close_enough(c.get(3).unwrap(), expected, 1e-12));
        // full cycles of a symmetric oscillation average to zero
        let wave: Vec<f64> = (0..200)
            .map(|k| 10.0 + (2.0 * std::f64::consts::PI * k as f64 / 20.0).sin())
            .collect();
        let c = cci(&wave, &wave, &wave, 20).unwrap();
        let tail = &c.defined()[1..];
        let cycle_mean = tail[..160].iter().sum::<f64>() / 160.0;
        assert!(cycle_mean.abs() < 1e-6, "{cycle_mean}");
    }

    /// Reference Wilder ADX written as explicit sums over the windows.
    fn adx_oracle(h: &[f64], l: &[f64], c: &[f64], w: usize) -> Vec<f64> {
        let n = c.len();
        let mut tr = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut m = vec![0.0; n];
        for t in 1..n {
            let up = h[t] - h[t - 1];
            let dn = l[t - 1] - l[t];
            if up > dn && up > 0.0 {
                p[t] = up;
            }
            if dn > up && dn > 0.0 {
                m[t] = dn;
            }
            tr[t] = [h[t] - l[t], (h[t] - c[t - 1]).abs(), (l[t] - c[t - 1]).abs()]
                .into_iter()
                .fold(f64::MIN, f64::max);
        }
        let wf = w as f64;
        let smooth = |x: &[f64]| {
            let mut s = vec![0.0; n];
            s[w] = x[1..=w].iter().sum();
            for t in w + 1..n {
                s[t] = s[t - 1] * (wf - 1.0) / wf + x[t];
            }
            s
        };
        let (st, sp, sm) = (smooth(&tr), smooth(&p), smooth(&m));
        let dx: Vec<f64> = (0..n)
            .map(|t| {
                if t < w || st[t] == 0.0 {
                    return 0.0;
                }
                let (a, b) = (sp[t] / st[t], sm[t] / st[t]);
                if a + b == 0.0 {
                    0.0
                } else {
                    100.0 * (a - b).abs() / (a + b)
                }
            })
            .collect();
        let mut out = vec![f64::NAN; n];
        out[2 * w - 1] = dx[w..2 * w].iter().sum::<f64>() / wf;
        for t in 2 * w..n {
            out[t] = (out[t - 1] * (wf - 1.0) + dx[t]) / wf;
        }
        out
    }

    #[test]
    fn adx_examples() {
        let c: Vec<f64> = (0..120).map(|k| 100.0 + 2.0 * k as f64).collect();
        let h: Vec<f64> = c.iter().map(|x| x + 0.5).collect();
        let l: Vec<f64> = c.iter().map(|x| x - 0.5).collect();
        let a = adx(&h, &l, &c, 14).unwrap();
        let oracle = adx_oracle(&h, &l, &c, 14);
        for t in a.defined_from()..c.len() {
            assert!(close_enough(a.get(t).unwrap(), oracle[t], 1e-12));
        }
        assert!(a.get(119).unwrap() > 99.0);
        let d = a.defined();
        assert!(d.windows(2).all(|w| w[1] >= w[0] - 1e-12));

        let flat = [5.0; 40];
        assert!(adx(&flat, &flat, &flat, 14).unwrap().defined().iter().all(|&v| v == 0.0));
        assert_eq!(
            adx(&flat[..27], &flat[..27], &flat[..27], 14),
            Err(IndicatorError::TooShort { len: 27, needed: 28 })
        );
    }

    fn random_walk(seed: u64, len: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut c = vec![100.0];
        for _ in 1..len {
            let last = *c.last().unwrap();
            c.push(last * (1.0 + rng.random_range(-0.03..0.03)));
        }
        let h = c.iter().map(|x| x * (1.0 + rng.random_range(0.0..0.02))).collect();
        let l = c.iter().map(|x| x * (1.0 - rng.random_range(0.0..0.02))).collect();
        (h, l, c)
    }

    #[test]
    fn adx_bounded_and_matches_oracle_on_random_walks() {
        for seed in 0..20 {
            let (h, l, c) = random_walk(seed, 300);
            let a = adx(&h, &l, &c, 14).unwrap();
            let oracle = adx_oracle(&h, &l, &c, 14);
            for t in a.defined_from()..c.len() {
                let v = a.get(t).unwrap();
                assert!((0.0..=100.0).contains(&v));
                assert!(close_enough(v, oracle[t], 1e-10));
            }
        }
    }

    fn returns_panel(cols: &[Vec<f64>]) -> ReturnPanel {
        let t = cols[0].len();
        let n = cols.len();
        let mut returns = Vec::with_capacity(t * n);
        for k in 0..t {
            for c in cols {
                returns.push(c[k]);
            }
        }
        let d0 = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        ReturnPanel {
            dates: (0..t).map(|k| d0 + chrono::Days::new(k as u64)).collect(),
            assets: (0..n).map(|i| format!("A{i}")).collect(),
            returns,
        }
    }

    fn two_pass(cols: &[Vec<f64>], start: usize, end: usize) -> Vec<f64> {
        let n = cols.len();
        let k = (end - start) as f64;
        let means: Vec<f64> = cols.iter().map(|c| c[start..end].iter().sum::<f64>() / k).collect();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for t in start..end {
                    s += (cols[i][t] - means[i]) * (cols[j][t] - means[j]);
                }
                out[i * n + j] = s / (k - 1.0);
            }
        }
        out
    }

    #[test]
    fn covariance_examples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..80).map(|_| rng.random_range(-0.05..0.05)).collect();
        let cov = rolling_covariance(&returns_panel(&[a.clone(), a.clone()]), 60, 70).unwrap();
        assert!(close_enough(cov.get(0, 1), cov.get(0, 0), 1e-14));
        assert!(close_enough(cov.get(1, 1), cov.get(0, 0), 1e-14));

        let cov = rolling_covariance(&returns_panel(&[a.clone(), vec![0.0; 80]]), 60, 60).unwrap();
        assert_eq!([cov.get(0, 1), cov.get(1, 0), cov.get(1, 1)], [0.0; 3]);

        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..200).map(|_| rng.random_range(-0.05..0.05)).collect())
            .collect();
        let panel = returns_panel(&cols);
        for t in 60..=200 {
            let cov = rolling_covariance(&panel, 60, t).unwrap();
            let oracle = two_pass(&cols, t - 60, t);
            for (x, y) in cov.matrix.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-12, "t={t}");
            }
        }
        assert!(rolling_covariance(&panel, 60, 59).is_err());
    }

    #[test]
    fn covariance_is_psd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..60).map(|_| rng.random_range(-0.05..0.05)).collect())
            .collect();
        let cov = rolling_covariance(&returns_panel(&cols), 60, 60).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(5, 5, &cov.matrix);
        assert!(m.symmetric_eigenvalues().iter().all(|&e| e > -1e-10));
    }

    proptest! {
        #[test]
        fn scale_behavior(seed in 0u64..1000, c in 0.1f64..50.0) {
            let (h, l, cl) = random_walk(seed, 120);
            let base = AssetIndicators::compute(&h, &l, &cl).unwrap();
            let sc = |v: &Vec<f64>| v.iter().map(|x| x * c).collect::<Vec<_>>();
            let scaled = AssetIndicators::compute(&sc(&h), &sc(&l), &sc(&cl)).unwrap();
            for t in base.defined_from()..cl.len() {
                let a = base.at(t).unwrap();
                let b = scaled.at(t).unwrap();
                // sma30, sma60, macd, upper, lower scale by c
                for k in 0..5 {
                    prop_assert!(close_enough(b[k], c * a[k], 1e-9));
                }
                // rsi, cci, adx unchanged
                for k in 5..8 {
                    prop_assert!(close_enough(b[k], a[k], 1e-9), "k={} {} {}", k, a[k], b[k]);
                }
            }
        }

        #[test]
        fn shift_equivariance(seed in 0u64..1000, shift in 1usize..30) {
            let (h, l, c) = random_walk(seed, 150);
            let full = AssetIndicators::compute(&h, &l, &c).unwrap();
            let later = AssetIndicators::compute(&h[shift..], &l[shift..], &c[shift..]).unwrap();
            // moving-window indicators agree exactly once both windows are defined
            for t in later.defined_from()..c.len() - shift {
                let a = full.at(t + shift).unwrap();
                let b = later.at(t).unwrap();
                for k in [0usize, 1, 3, 4, 6] {
                    prop_assert!(close_enough(a[k], b[k], 1e-9));
                }
            }
            // EMA recursions are seeded by the first value, so delaying the
            // series behind copies of that value shifts MACD exactly
            let mut delayed = vec![c[0]; shift];
            delayed.extend_from_slice(&c);
            let m = macd(&c).unwrap();
            let md = macd(&delayed).unwrap();
            for t in m.defined_from()..c.len() {
                prop_assert!(close_enough(md.get(t + shift).unwrap(), m.get(t).unwrap(), 1e-9));
            }
        }

        #[test]
        fn bounded_oscillators_and_bands(seed in 0u64..1000) {
            let (h, l, c) = random_walk(seed, 150);
            let ind = AssetIndicators::compute(&h, &l, &c).unwrap();
            let bands = bollinger(&c, BOLLINGER_WINDOW, BOLLINGER_K).unwrap();
            for t in ind.defined_from()..c.len() {
                let v = ind.at(t).unwrap();
                prop_assert!((0.0..=100.0).contains(&v[5]));
                prop_assert!((0.0..=100.0).contains(&v[7]));
                let m = bands.middle.get(t).unwrap();
                prop_assert!(v[3] >= m && m >= v[4]);
            }
        }
    }
}
