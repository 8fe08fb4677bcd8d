use num_rational::Ratio;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

/// Exact rate in [0, 1].
pub type Rate = Ratio<u128>;

/// Counts and the derived rates. A rate whose denominator would be zero is
/// `None` (undefined), never zero by convention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub ambiguous: u64,
    pub precision: Option<Rate>,
    pub recall: Option<Rate>,
    pub f1: Option<Rate>,
}

fn rate(numerator: u64, denominator: u64) -> Option<Rate> {
    (denominator > 0).then(|| Ratio::new(numerator as u128, denominator as u128))
}

/// Harmonic mean; undefined when either input is undefined or both are zero.
pub fn harmonic_mean(precision: Option<Rate>, recall: Option<Rate>) -> Option<Rate> {
    let (p, r) = (precision?, recall?);
    let sum = p + r;
    if sum.is_zero() {
        return None;
    }
    Some(Ratio::from_integer(2) * p * r / sum)
}

pub fn compute_metrics(tp: u64, fp: u64, fn_: u64) -> MetricsReport {
    compute_metrics_with_ambiguous(tp, fp, fn_, 0)
}

pub fn compute_metrics_with_ambiguous(tp: u64, fp: u64, fn_: u64, ambiguous: u64) -> MetricsReport {
    let precision = rate(tp, tp + fp);
    let recall = rate(tp, tp + fn_);
    MetricsReport {
        tp,
        fp,
        fn_,
        ambiguous,
        precision,
        recall,
        f1: harmonic_mean(precision, recall),
    }
}

pub fn to_f64(rate: &Rate) -> f64 {
    *rate.numer() as f64 / *rate.denom() as f64
}

/// Rate in tenths of a percent, rounded half to even (0.5895 -> 590).
pub fn tenths_of_percent(rate: &Rate) -> u64 {
    let scaled = rate.numer() * 1000;
    let denom = *rate.denom();
    let floor = scaled / denom;
    let twice_rem = 2 * (scaled % denom);
    let rounded = if twice_rem > denom || (twice_rem == denom && floor % 2 == 1) {
        floor + 1
    } else {
        floor
    };
    rounded as u64
}

pub const UNDEFINED: &str = "—";

pub fn format_tenths(tenths: Option<u64>) -> String {
    match tenths {
        Some(t) => format!("{}.{}%", t / 10, t % 10),
        None => UNDEFINED.to_string(),
    }
}

pub fn format_percent(rate: Option<&Rate>) -> String {
    format_tenths(rate.map(tenths_of_percent))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_counts_are_undefined() {
        let m = compute_metrics(0, 0, 0);
        assert_eq!((m.precision, m.recall, m.f1), (None, None, None));
        let m = compute_metrics(0, 3, 4);
        assert_eq!(m.precision, Some(Ratio::from_integer(0)));
        assert_eq!(m.recall, Some(Ratio::from_integer(0)));
        assert_eq!(m.f1, None);
    }

    #[test]
    fn perfect_counts() {
        let m = compute_metrics(10, 0, 0);
        let one = Some(Ratio::from_integer(1));
        assert_eq!((m.precision, m.recall, m.f1), (one, one, one));
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(tenths_of_percent(&Ratio::new(1, 8)), 125);
        // 0.00125 -> 1.25 tenths -> 1 ; 0.00175 -> 1.75 -> 2
        assert_eq!(tenths_of_percent(&Ratio::new(1, 800)), 1);
        assert_eq!(tenths_of_percent(&Ratio::new(7, 4000)), 2);
        // exactly half: 0.0005 -> 0.5 tenths -> 0 (even); 0.0015 -> 1.5 -> 2
        assert_eq!(tenths_of_percent(&Ratio::new(1, 2000)), 0);
        assert_eq!(tenths_of_percent(&Ratio::new(3, 2000)), 2);
        assert_eq!(format_tenths(Some(875)), "87.5%");
        assert_eq!(format_tenths(None), "—");
    }
}
