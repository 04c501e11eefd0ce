use serde::{Deserialize, Serialize};

/// Cauchy-style convergence proxy shared by every "limit along Π" report.
///
/// A finite prefix of levels cannot certify a limit. A report is declared
/// converged when the gap between the last two levels is below
/// `tol * max(1, scale)` and the gap did not increase over the last
/// `monotone_window` levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub tol: f64,
    pub monotone_window: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            monotone_window: 3,
        }
    }
}

/// Result of [`cauchy_gap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    /// `gaps[k]` is the max probe gap between level rows `k` and `k + 1`.
    pub gaps: Vec<f64>,
    pub metric: f64,
    pub converged: bool,
}

/// Max-over-probes gaps between consecutive level rows.
///
/// `rows[k][p]` is the level-k approximation at probe p. Needs at least two rows.
pub fn cauchy_gap(rows: &[Vec<f64>], cfg: &ConvergenceConfig) -> GapSummary {
    let gaps: Vec<f64> = rows
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let metric = gaps.last().copied().unwrap_or(f64::INFINITY);
    let scale = rows
        .last()
        .map(|r| r.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
        .unwrap_or(0.0)
        .max(1.0);
    let window = cfg.monotone_window.saturating_sub(1).max(1);
    let tail = &gaps[gaps.len().saturating_sub(window)..];
    let monotone = tail.windows(2).all(|w| w[1] <= w[0]);
    GapSummary {
        converged: !gaps.is_empty() && metric < cfg.tol * scale && monotone,
        gaps,
        metric,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_gaps_converge() {
        let rows = vec![vec![1.0], vec![0.5], vec![0.25], vec![0.2495]];
        let s = cauchy_gap(&rows, &ConvergenceConfig::default());
        assert_eq!(s.gaps.len(), 3);
        assert!((s.metric - 5e-4).abs() < 1e-15);
        assert!(s.converged);
    }

    #[test]
    fn growing_gap_is_not_converged() {
        let rows = vec![vec![0.0], vec![1e-5], vec![1e-4]];
        let s = cauchy_gap(&rows, &ConvergenceConfig::default());
        assert!(!s.converged);
    }

    #[test]
    fn single_row_never_converges() {
        let s = cauchy_gap(&[vec![1.0]], &ConvergenceConfig::default());
        assert!(!s.converged);
        assert!(s.metric.is_infinite());
    }
}
