use alloc::vec::Vec;

use super::MelConfig;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

/// Triangular filters over STFT bins, stored sparsely as
/// `(first nonzero bin, weights)` per band. Peaks are 1, no area
/// normalization.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    bins: usize,
    centers_hz: Vec<f64>,
    rows: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(rate: u32, fft_size: usize, cfg: &MelConfig) -> Self {
        let bins = fft_size / 2 + 1;
        let lo = hz_to_mel(cfg.f_min);
        let hi = hz_to_mel(cfg.f_max);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = rate as f64 / fft_size as f64;

        let rows = (0..cfg.n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                let dense: Vec<f64> = (0..bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - left) / (center - left);
                        let down = (right - f) / (right - center);
                        up.min(down).max(0.0)
                    })
                    .collect();
                match dense.iter().position(|&w| w > 0.0) {
                    Some(first) => {
                        let last = dense.iter().rposition(|&w| w > 0.0).unwrap_or(first);
                        (first, dense[first..=last].to_vec())
                    }
                    None => (0, Vec::new()),
                }
            })
            .collect();

        MelFilterbank { bins, centers_hz: edges[1..=cfg.n_mels].to_vec(), rows }
    }

    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }

    pub fn n_bins(&self) -> usize {
        self.bins
    }

    /// Center frequency of each band in Hz.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// First nonzero bin and the nonzero weight run of band `m`.
    pub fn row(&self, m: usize) -> (usize, &[f64]) {
        let (start, ref w) = self.rows[m];
        (start, w)
    }

    /// Weight of band `m` at bin `k`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (start, w) = self.row(m);
        if k < start {
            0.0
        } else {
            w.get(k - start).copied().unwrap_or(0.0)
        }
    }
}
