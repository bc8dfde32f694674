//! Latency statistics: avg/max/min/population-std in milliseconds.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("no-samples")]
    NoSamples,
}

pub const STATS_CSV_HEADER: &str = "name,avg_ms,max_ms,min_ms,std_ms,count";

/// Per-topic latency summary. All values are milliseconds, printed to six
/// decimal places. The standard deviation is the population form
/// (divide by n, not n-1).
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyStats {
    pub name: String,
    pub avg_ms: f64,
    pub max_ms: f64,
    pub min_ms: f64,
    pub std_ms: f64,
    pub count: usize,
}

impl LatencyStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            self.name, self.avg_ms, self.max_ms, self.min_ms, self.std_ms, self.count
        )
    }
}

/// Reduces microsecond samples to a millisecond summary.
pub fn compute_stats(name: &str, samples_us: &[u64]) -> Result<LatencyStats, StatsError> {
    if samples_us.is_empty() {
        return Err(StatsError::NoSamples);
    }
    let n = samples_us.len() as f64;
    let ms: Vec<f64> = samples_us.iter().map(|&us| us as f64 / 1_000.0).collect();
    let avg = ms.iter().sum::<f64>() / n;
    let max = ms.iter().copied().fold(f64::MIN, f64::max);
    let min = ms.iter().copied().fold(f64::MAX, f64::min);
    let var = ms.iter().map(|x| (x - avg) * (x - avg)).sum::<f64>() / n;
    Ok(LatencyStats {
        name: name.to_string(),
        avg_ms: avg,
        max_ms: max,
        min_ms: min,
        std_ms: var.sqrt(),
        count: samples_us.len(),
    })
}

/// Renders the four-statistics table: one column per entry, rows
/// avg./max./min./st.d. in milliseconds.
pub fn format_table(entries: &[LatencyStats]) -> String {
    let mut out = String::new();
    let label_width = 10;
    let col_width = entries
        .iter()
        .map(|e| e.name.len().max(13))
        .max()
        .unwrap_or(13)
        + 2;
    out.push_str(&" ".repeat(label_width));
    for e in entries {
        out.push_str(&format!("{:>col_width$}", e.name));
    }
    out.push('\n');
    type Getter = fn(&LatencyStats) -> f64;
    let rows: [(&str, Getter); 4] = [
        ("avg.(ms)", |e| e.avg_ms),
        ("max.(ms)", |e| e.max_ms),
        ("min.(ms)", |e| e.min_ms),
        ("st.d.(ms)", |e| e.std_ms),
    ];
    for (label, get) in rows {
        out.push_str(&format!("{label:<label_width$}"));
        for e in entries {
            out.push_str(&format!("{:>col_width$.6}", get(e)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_population_std() {
        // 2ms, 4ms, 6ms: mean 4, population variance (4+0+4)/3 = 8/3,
        // std = sqrt(8/3) = 1.632993...
        let s = compute_stats("t", &[2_000, 4_000, 6_000]).unwrap();
        assert_eq!(format!("{:.6}", s.avg_ms), "4.000000");
        assert_eq!(format!("{:.6}", s.max_ms), "6.000000");
        assert_eq!(format!("{:.6}", s.min_ms), "2.000000");
        assert_eq!(format!("{:.6}", s.std_ms), "1.632993");
        assert_eq!(s.count, 3);
    }

    #[test]
    fn single_sample_degenerates() {
        let s = compute_stats("one", &[5_000]).unwrap();
        assert_eq!(s.avg_ms, 5.0);
        assert_eq!(s.max_ms, 5.0);
        assert_eq!(s.min_ms, 5.0);
        assert_eq!(s.std_ms, 0.0);
        assert_eq!(s.count, 1);
    }

    #[test]
    fn empty_samples_error() {
        assert_eq!(compute_stats("x", &[]), Err(StatsError::NoSamples));
    }

    #[test]
    fn min_avg_max_ordering_holds() {
        let mut rng = crate::rng::SplitMix64::new(5);
        for _ in 0..50 {
            let n = 1 + rng.next_inclusive(40) as usize;
            let samples: Vec<u64> = (0..n).map(|_| rng.next_inclusive(50_000)).collect();
            let s = compute_stats("r", &samples).unwrap();
            assert!(s.min_ms <= s.avg_ms + 1e-12);
            assert!(s.avg_ms <= s.max_ms + 1e-12);
            assert!(s.std_ms >= 0.0);
        }
    }

    #[test]
    fn csv_row_has_six_decimals() {
        let s = compute_stats("payload1", &[1_234]).unwrap();
        assert_eq!(
            s.csv_row(),
            "payload1,1.234000,1.234000,1.234000,0.000000,1"
        );
    }

    #[test]
    fn table_contains_stat_row_labels() {
        let s = vec![
            compute_stats("payload1", &[1_000]).unwrap(),
            compute_stats("payload2", &[2_000]).unwrap(),
        ];
        let table = format_table(&s);
        for label in ["avg.(ms)", "max.(ms)", "min.(ms)", "st.d.(ms)"] {
            assert!(table.contains(label), "missing {label}");
        }
        assert!(table.contains("payload2"));
    }
}
