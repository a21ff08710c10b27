use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_g17;

/// Default segment length.
pub const DEFAULT_SEGMENT: usize = 1 << 18;

/// Averaged periodogram; frequencies in cycles per `τ0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub segment_len: usize,
    pub segments: usize,
    pub one_sided: bool,
    /// Set when the segment length is not a power of two.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

impl PsdEstimate {
    /// CSV with header `f,S`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("f,S\n");
        for (f, p) in self.frequencies.iter().zip(&self.power) {
            s.push_str(&format!("{},{}\n", fmt_g17(*f), fmt_g17(*p)));
        }
        s
    }
}

/// Splits `signal` into `K = ⌊len/R⌋` non-overlapping segments of length
/// `R` (dropping the tail), and averages their periodograms `|DFT|²/R`.
/// The one-sided form keeps `0..=R/2` and doubles every bin except 0 and
/// the Nyquist bin.
pub fn trace_psd(signal: &[f64], segment_len: usize, one_sided: bool) -> Result<PsdEstimate> {
    let r = segment_len;
    if r == 0 || signal.len() < r {
        return Err(Error::Data(format!("signal of length {} is shorter than one segment ({r})", signal.len())));
    }
    let k = signal.len() / r;
    let warning = (!r.is_power_of_two()).then(|| format!("segment length {r} is not a power of two"));
    let fft = FftPlanner::<f64>::new().plan_fft_forward(r);
    let mut acc = vec![0.0f64; r];
    let mut buf = vec![Complex::new(0.0, 0.0); r];
    for seg in signal.chunks_exact(r).take(k) {
        for (b, &v) in buf.iter_mut().zip(seg) {
            *b = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
    }
    let scale = 1.0 / (r as f64 * k as f64);
    let bins = if one_sided { r / 2 + 1 } else { r };
    let power = (0..bins)
        .map(|i| {
            let p = acc[i] * scale;
            let edge = i == 0 || (r % 2 == 0 && i == r / 2);
            if one_sided && !edge {
                2.0 * p
            } else {
                p
            }
        })
        .collect();
    Ok(PsdEstimate {
        frequencies: (0..bins).map(|i| i as f64 / r as f64).collect(),
        power,
        segment_len: r,
        segments: k,
        one_sided,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_signal_is_all_dc() {
        let p = trace_psd(&[2.0; 64], 16, true).unwrap();
        assert_eq!(p.segments, 4);
        assert!((p.power[0] - 64.0).abs() < 1e-12);
        assert!(p.power[1..].iter().all(|&v| v < 1e-20));
        assert_eq!(p.frequencies.len(), 9);
        assert!(p.warning.is_none());
    }

    #[test]
    fn parseval() {
        let sig: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let p = trace_psd(&sig, 100, false).unwrap();
        let used = &sig[..1000];
        let mean_sq = used.iter().map(|v| v * v).sum::<f64>() / 1000.0;
        let total: f64 = p.power.iter().sum::<f64>() / 100.0;
        assert!((total - mean_sq).abs() < 1e-9);
        assert!(p.warning.is_some());
        assert!(trace_psd(&sig, 2000, true).is_err());
    }
}
