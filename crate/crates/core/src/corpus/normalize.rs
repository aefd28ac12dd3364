use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::Session;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel z-score statistics fitted on the training partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean and standard deviation per channel over every sample
    /// of every training session.
    pub fn fit<'a, I>(train_sessions: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Session>,
    {
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mut shift: Vec<f64> = Vec::new();
        for s in train_sessions {
            let sig = s.signal();
            if sum.is_empty() {
                sum = vec![0.0; sig.nrows()];
                sum_sq = vec![0.0; sig.nrows()];
                // shift by the first sample for a numerically stable variance
                shift = sig.column(0).iter().map(|&v| v as f64).collect();
            } else if sig.nrows() != sum.len() {
                return Err(Error::Dimension(format!(
                    "session {} has {} channels, expected {}",
                    s.session_id(),
                    sig.nrows(),
                    sum.len()
                )));
            }
            for (c, row) in sig.axis_iter(Axis(0)).enumerate() {
                for &v in row {
                    let d = v as f64 - shift[c];
                    sum[c] += d;
                    sum_sq[c] += d * d;
                }
            }
            count += sig.ncols();
        }
        if count == 0 {
            return Err(Error::validation("no training samples to fit normalizer"));
        }
        let n = count as f64;
        let mean = sum.iter().zip(&shift).map(|(s, k)| s / n + k).collect();
        let std = sum
            .iter()
            .zip(&sum_sq)
            .map(|(s, q)| ((q / n - (s / n).powi(2)).max(0.0)).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, signal: &Array2<f32>) -> Result<Array2<f32>> {
        if signal.nrows() != self.n_channels() {
            return Err(Error::Dimension(format!(
                "signal has {} channels, normalizer {}",
                signal.nrows(),
                self.n_channels()
            )));
        }
        let mut out = signal.clone();
        for (c, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            row.mapv_inplace(|v| ((v as f64 - m) / s) as f32);
        }
        Ok(out)
    }

    pub fn apply_session(&self, session: &Session) -> Result<Session> {
        session.with_signal(self.apply(session.signal())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ChannelConfig;
    use rand::Rng;

    fn session(signal: Array2<f32>) -> Session {
        let c = signal.nrows();
        Session::new("s", signal, vec![], ChannelConfig::new(c, 250.0)).unwrap()
    }

    #[test]
    fn constant_channel_gets_floor_and_zeros() {
        let s = session(Array2::from_elem((1, 100), 5.0));
        let n = Normalizer::fit([&s]).unwrap();
        assert_eq!(n.mean[0], 5.0);
        assert_eq!(n.std[0], STD_FLOOR);
        assert!(n.apply(s.signal()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plus_minus_one_has_unit_std() {
        let s = session(Array2::from_shape_fn((1, 10), |(_, t)| if t % 2 == 0 { -1.0 } else { 1.0 }));
        let n = Normalizer::fit([&s]).unwrap();
        assert!(n.mean[0].abs() < 1e-15);
        assert!((n.std[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalized_training_data_is_centred() {
        let mut rng = crate::rng::stream(3, &[]);
        let a = session(Array2::from_shape_fn((4, 700), |(c, _)| rng.random::<f32>() * 3.0 + c as f32 * 10.0));
        let b = session(Array2::from_shape_fn((4, 300), |_| rng.random::<f32>() - 0.5));
        let n = Normalizer::fit([&a, &b]).unwrap();
        let (za, zb) = (n.apply(a.signal()).unwrap(), n.apply(b.signal()).unwrap());
        for c in 0..4 {
            let all: Vec<f64> =
                za.row(c).iter().chain(zb.row(c).iter()).map(|&v| v as f64).collect();
            let m = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all.len() as f64;
            assert!(m.abs() < 1e-6, "channel {c}: mean {m}");
            assert!((var - 1.0).abs() < 1e-4, "channel {c}: var {var}");
        }
    }
}
