//! Checkpoint library backing the attacker's objective: models captured
//! from a shadow honest run, each tagged with its measured test accuracy.
//! Persisted as a directory of flat little-endian `f64` vectors plus a
//! line-oriented manifest.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamVec;

#[derive(Debug, Clone)]
pub struct ReferenceLibrary {
    /// `(model, accuracy in [0, 1])`, in capture order.
    pub checkpoints: Vec<(ParamVec, f64)>,
}

impl ReferenceLibrary {
    pub fn new() -> Self {
        Self { checkpoints: Vec::new() }
    }

    pub fn push(&mut self, model: ParamVec, accuracy: f64) {
        self.checkpoints.push((model, accuracy));
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    /// Checkpoint whose accuracy is closest to `target` (ties to the
    /// earliest capture).
    pub fn nearest(&self, target: f64) -> Result<&(ParamVec, f64)> {
        self.checkpoints
            .iter()
            .min_by(|a, b| {
                (a.1 - target)
                    .abs()
                    .partial_cmp(&(b.1 - target).abs())
                    .unwrap()
            })
            .ok_or_else(|| Error::config("reference library is empty"))
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("manifest.txt");
        let mut manifest = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        for (id, (model, acc)) in self.checkpoints.iter().enumerate() {
            let file = dir.join(format!("{id:04}.bin"));
            let mut bytes = Vec::with_capacity(model.len() * 8);
            for v in model {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(&file, bytes).map_err(|e| Error::io(&file, e))?;
            writeln!(manifest, "{id:04} {acc} {r}", r = model.len())
                .map_err(|e| Error::io(&manifest_path, e))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.txt");
        let file = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut lib = Self::new();
        for (line_no, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&manifest_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(id), Some(acc), Some(r)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::config(format!(
                    "malformed manifest line {} in {}",
                    line_no + 1,
                    manifest_path.display()
                )));
            };
            let acc: f64 = acc
                .parse()
                .map_err(|_| Error::config(format!("bad accuracy on manifest line {}", line_no + 1)))?;
            let r: usize = r
                .parse()
                .map_err(|_| Error::config(format!("bad length on manifest line {}", line_no + 1)))?;
            let path = dir.join(format!("{id}.bin"));
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != r * 8 {
                return Err(Error::config(format!(
                    "checkpoint {} holds {} bytes, manifest says {}",
                    path.display(),
                    bytes.len(),
                    r * 8
                )));
            }
            let model: ParamVec = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            lib.push(model, acc);
        }
        if lib.is_empty() {
            return Err(Error::config(format!(
                "reference library at {} holds no checkpoints",
                dir.display()
            )));
        }
        Ok(lib)
    }
}

impl Default for ReferenceLibrary {
    fn default() -> Self {
        Self::new()
    }
}

/// Outcome of picking the objective offset for a target accuracy.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub c_offset: ParamVec,
    /// Accuracy of the checkpoint realizing the equilibrium.
    pub achieved_accuracy: f64,
    /// Set when no checkpoint was within two points of the target.
    pub warned: bool,
}

/// Choose `C` so the closed-loop equilibrium `reference + C/k` coincides
/// with the library checkpoint nearest `target_acc`.
pub fn calibrate_offset(
    lib: &ReferenceLibrary,
    reference: &ParamVec,
    target_acc: f64,
    k: f64,
) -> Result<Calibration> {
    let (model, acc) = lib.nearest(target_acc)?;
    if model.len() != reference.len() {
        return Err(Error::config("checkpoint length does not match reference"));
    }
    let c_offset: ParamVec = model
        .iter()
        .zip(reference)
        .map(|(t, w)| k * (t - w))
        .collect();
    Ok(Calibration {
        c_offset,
        achieved_accuracy: *acc,
        warned: (acc - target_acc).abs() > 0.02,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut lib = ReferenceLibrary::new();
        lib.push(vec![1.0, -2.5, 0.125], 0.61);
        lib.push(vec![0.0, 0.5, 3.0], 0.55);
        lib.save_dir(dir.path()).unwrap();
        let back = ReferenceLibrary::load_dir(dir.path()).unwrap();
        assert_eq!(back.checkpoints.len(), 2);
        assert_eq!(back.checkpoints[0].0, vec![1.0, -2.5, 0.125]);
        assert_eq!(back.checkpoints[0].1, 0.61);
        assert_eq!(back.checkpoints[1].1, 0.55);
    }

    #[test]
    fn nearest_picks_closest_accuracy() {
        let mut lib = ReferenceLibrary::new();
        lib.push(vec![1.0], 0.9);
        lib.push(vec![2.0], 0.6);
        assert_eq!(lib.nearest(0.58).unwrap().1, 0.6);
        assert_eq!(lib.nearest(0.88).unwrap().1, 0.9);
    }

    #[test]
    fn calibrate_to_own_accuracy_gives_zero_offset() {
        let mut lib = ReferenceLibrary::new();
        let reference = vec![0.3, -0.4];
        lib.push(reference.clone(), 0.6);
        lib.push(vec![9.0, 9.0], 0.4);
        let cal = calibrate_offset(&lib, &reference, 0.6, 0.5).unwrap();
        assert_eq!(cal.c_offset, vec![0.0, 0.0]);
        assert!(!cal.warned);
    }

    #[test]
    fn calibrate_moves_equilibrium_to_chosen_checkpoint() {
        // Checkpoints (w_a, 0.60) and (w_b, 0.55); reference w_a, target 0.55.
        let w_a = vec![1.0, 2.0];
        let w_b = vec![0.0, 4.0];
        let mut lib = ReferenceLibrary::new();
        lib.push(w_a.clone(), 0.60);
        lib.push(w_b.clone(), 0.55);
        let k = 0.3;
        let cal = calibrate_offset(&lib, &w_a, 0.55, k).unwrap();
        for j in 0..2 {
            let equilibrium = w_a[j] + cal.c_offset[j] / k;
            assert!((equilibrium - w_b[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn calibrate_warns_when_target_far_from_library() {
        let mut lib = ReferenceLibrary::new();
        lib.push(vec![1.0], 0.9);
        let cal = calibrate_offset(&lib, &vec![1.0], 0.5, 1.0).unwrap();
        assert!(cal.warned);
    }

    #[test]
    fn empty_library_is_config_error() {
        let lib = ReferenceLibrary::new();
        assert!(calibrate_offset(&lib, &vec![1.0], 0.5, 1.0).is_err());
    }
}
