//! Training of the audited classifier and of the offline shadow ensemble.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataspace::LabeledDataset;
use crate::error::{AuditError, Result};
use crate::netcore::{self, Architecture, LossSpec, MlpModel, OptConfig, Targets};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;

/// Cross-entropy classifier over all `class_count` labels of `data`.
///
/// The network is initialized from `init_seed`; shuffling uses `opt.seed`.
pub fn train_classifier<T: Scalar>(
    data: &LabeledDataset<T>,
    arch: &Architecture,
    opt: &OptConfig,
    init_seed: u64,
) -> Result<MlpModel<T>> {
    let init = arch.build(data.dim(), data.class_count(), init_seed)?;
    let (model, _) = netcore::train(
        &init,
        data.features(),
        Targets::Labels(data.labels()),
        &LossSpec::SoftmaxCrossEntropy,
        opt,
    )?;
    Ok(model)
}

/// The audited model `f`, trained on the private split.
pub fn train_target<T: Scalar>(
    private: &LabeledDataset<T>,
    arch: &Architecture,
    opt: &OptConfig,
) -> Result<MlpModel<T>> {
    train_classifier(private, arch, opt, derive_seed(opt.seed, crate::rng::stream::TARGET_INIT))
}

/// Shadow models plus the record of which public rows each one saw.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowEnsemble<T> {
    pub models: Vec<MlpModel<T>>,
    /// `masks[j][i]` is true when model `j` trained on public row `i`.
    pub masks: Vec<Vec<bool>>,
    pub subset_fraction: f64,
}

impl<T: Scalar> ShadowEnsemble<T> {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn public_rows(&self) -> usize {
        self.masks.first().map_or(0, Vec::len)
    }

    /// Indices of models that did not train on public row `row`; for a
    /// query outside the public set (`None`) every model is an out-model.
    pub fn out_models(&self, row: Option<usize>) -> Vec<usize> {
        match row {
            None => (0..self.models.len()).collect(),
            Some(i) => (0..self.models.len()).filter(|&j| !self.masks[j][i]).collect(),
        }
    }

    /// Errors when some public row was used by every model.
    pub fn validate_coverage(&self) -> Result<()> {
        for i in 0..self.public_rows() {
            if self.masks.iter().all(|m| m[i]) {
                return Err(AuditError::invalid(format!(
                    "public row {i} is inside every shadow model; no out-model remains"
                )));
            }
        }
        Ok(())
    }

    /// Mask file text: header `k m`, then one line of space-separated 0/1
    /// flags per model.
    pub fn masks_to_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.masks.len(), self.public_rows());
        for mask in &self.masks {
            let line: Vec<&str> = mask.iter().map(|&b| if b { "1" } else { "0" }).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

pub fn masks_from_str(text: &str) -> Result<Vec<Vec<bool>>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let dims: Vec<usize> = header
        .split_whitespace()
        .filter_map(|t| t.parse().ok())
        .collect();
    let [k, m] = dims[..] else {
        return Err(AuditError::Parse {
            line: 1,
            msg: format!("mask header must be `k m`, got {header:?}"),
        });
    };
    let mut masks = Vec::with_capacity(k);
    for j in 0..k {
        let line = lines.next().ok_or(AuditError::Parse {
            line: j + 2,
            msg: "missing mask row".into(),
        })?;
        let row: Vec<bool> = line
            .split_whitespace()
            .map(|t| match t {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(AuditError::Parse {
                    line: j + 2,
                    msg: format!("mask entry must be 0 or 1, got {t:?}"),
                }),
            })
            .collect::<Result<_>>()?;
        if row.len() != m {
            return Err(AuditError::Parse {
                line: j + 2,
                msg: format!("expected {m} mask entries, got {}", row.len()),
            });
        }
        masks.push(row);
    }
    Ok(masks)
}

/// Trains `k` shadow classifiers, each on an independent random subset of
/// `round(subset_fraction * m)` public rows.
///
/// Model `j` draws its subset and initialization from seeds derived from
/// `(seed, j)` and otherwise shares `arch` and `opt` with the target, so the
/// result does not depend on how the work is scheduled across threads.
pub fn train_shadow_ensemble<T: Scalar>(
    public: &LabeledDataset<T>,
    k: usize,
    subset_fraction: f64,
    arch: &Architecture,
    opt: &OptConfig,
    seed: u64,
) -> Result<ShadowEnsemble<T>> {
    if k == 0 {
        return Err(AuditError::invalid("shadow ensemble needs k >= 1"));
    }
    if !(subset_fraction > 0.0 && subset_fraction < 1.0) {
        return Err(AuditError::invalid(format!(
            "shadow subset fraction must lie in (0, 1), got {subset_fraction}"
        )));
    }
    let m = public.len();
    let take = (subset_fraction * m as f64).round() as usize;
    if take < 2 {
        return Err(AuditError::invalid(format!(
            "shadow subsets of {take} rows are too small to train"
        )));
    }

    let masks: Vec<Vec<bool>> = (0..k)
        .map(|j| {
            let mut rng = rng_from_seed(derive_seed(seed, 2 * j as u64));
            let mut idx: Vec<usize> = (0..m).collect();
            idx.shuffle(&mut rng);
            let mut mask = vec![false; m];
            for &i in &idx[..take] {
                mask[i] = true;
            }
            mask
        })
        .collect();

    let ensemble_coverage = ShadowEnsemble::<T> {
        models: Vec::new(),
        masks: masks.clone(),
        subset_fraction,
    };
    if k > 1 {
        ensemble_coverage.validate_coverage()?;
    }

    let models = masks
        .par_iter()
        .enumerate()
        .map(|(j, mask)| {
            let rows: Vec<usize> = (0..m).filter(|&i| mask[i]).collect();
            let subset = public.select(&rows, format!("{}/shadow{j}", public.tag()))?;
            let model_opt = opt.with_seed(derive_seed(opt.seed, j as u64 + 1));
            train_classifier(&subset, arch, &model_opt, derive_seed(seed, 2 * j as u64 + 1))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ShadowEnsemble {
        models,
        masks,
        subset_fraction,
    })
}

/// Writes `model_XXX.ckpt` per shadow model and `masks.txt`.
pub fn write_ensemble<T: Scalar>(ensemble: &ShadowEnsemble<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AuditError::io(dir, e))?;
    for (j, model) in ensemble.models.iter().enumerate() {
        netcore::write_model(model, &dir.join(format!("model_{j:03}.ckpt")))?;
    }
    let path = dir.join("masks.txt");
    std::fs::write(&path, ensemble.masks_to_string()).map_err(|e| AuditError::io(&path, e))?;
    let path = dir.join("ensemble.meta");
    std::fs::write(&path, format!("subset_fraction={}\n", ensemble.subset_fraction))
        .map_err(|e| AuditError::io(&path, e))
}

pub fn read_ensemble<T: Scalar>(dir: &Path) -> Result<ShadowEnsemble<T>> {
    let path = dir.join("masks.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| AuditError::io(&path, e))?;
    let masks = masks_from_str(&text)?;
    let models = (0..masks.len())
        .map(|j| netcore::read_model(&dir.join(format!("model_{j:03}.ckpt"))))
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join("ensemble.meta");
    let meta = std::fs::read_to_string(&path).map_err(|e| AuditError::io(&path, e))?;
    let subset_fraction = meta
        .trim()
        .strip_prefix("subset_fraction=")
        .and_then(|v| v.parse().ok())
        .ok_or(AuditError::Parse {
            line: 1,
            msg: "expected subset_fraction=<value>".into(),
        })?;
    Ok(ShadowEnsemble {
        models,
        masks,
        subset_fraction,
    })
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy<T: Scalar>(model: &MlpModel<T>, data: &LabeledDataset<T>) -> Result<f64> {
    let mut hits = 0usize;
    for i in 0..data.len() {
        let logits = model.forward(data.row(i))?;
        let arg = (0..logits.len()).fold(0, |b, j| if logits[j] > logits[b] { j } else { b });
        hits += usize::from(arg == data.label(i));
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Mean softmax probability the model assigns to `class` over `data`.
pub fn mean_class_probability<T: Scalar>(
    model: &MlpModel<T>,
    data: &LabeledDataset<T>,
    class: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let p = netcore::softmax(&model.forward(data.row(i))?);
        total += p
            .get(class)
            .ok_or_else(|| AuditError::invalid(format!("class {class} out of range")))?
            .as_f64();
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspace::{generate_synthetic, SynthConfig};

    fn small() -> LabeledDataset<f64> {
        generate_synthetic(&SynthConfig {
            class_count: 3,
            feature_dim: 4,
            per_class_count: 20,
            mean_radius: 3.0,
            spread_min: 0.3,
            spread_max: 0.6,
            seed: 1,
        })
        .unwrap()
    }

    fn quick_opt() -> OptConfig {
        OptConfig {
            epochs: 5,
            ..OptConfig::default()
        }
    }

    #[test]
    fn single_class_private_set_predicts_that_class() {
        let d = small().class_subset(2).unwrap();
        let m = train_target(&d, &Architecture::new(vec![8]), &OptConfig { epochs: 200, learning_rate: 0.01, ..OptConfig::default() })
            .unwrap();
        assert_eq!(m.output_dim(), 3);
        assert_eq!(accuracy(&m, &d).unwrap(), 1.0);
    }

    #[test]
    fn ensemble_masks_have_requested_size() {
        let d = small();
        let e = train_shadow_ensemble(&d, 10, 0.5, &Architecture::new(vec![4]), &quick_opt(), 3).unwrap();
        assert_eq!(e.len(), 10);
        for mask in &e.masks {
            assert_eq!(mask.iter().filter(|&&b| b).count(), 30);
        }
        assert_eq!(e.out_models(None).len(), 10);
        let again = train_shadow_ensemble(&d, 10, 0.5, &Architecture::new(vec![4]), &quick_opt(), 3).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn single_model_nearly_full_mask() {
        let d = small();
        let e = train_shadow_ensemble(&d, 1, 0.95, &Architecture::new(vec![4]), &quick_opt(), 3).unwrap();
        assert_eq!(e.masks[0].iter().filter(|&&b| b).count(), 57);
    }

    #[test]
    fn rejects_bad_parameters() {
        let d = small();
        let arch = Architecture::new(vec![4]);
        assert!(train_shadow_ensemble(&d, 0, 0.5, &arch, &quick_opt(), 0).is_err());
        assert!(train_shadow_ensemble(&d, 2, 1.0, &arch, &quick_opt(), 0).is_err());
        assert!(train_shadow_ensemble(&d, 2, 0.01, &arch, &quick_opt(), 0).is_err());
    }

    #[test]
    fn mask_text_round_trip() {
        let masks = vec![vec![true, false, true], vec![false, false, true]];
        let e = ShadowEnsemble::<f64> { models: vec![], masks: masks.clone(), subset_fraction: 0.5 };
        assert_eq!(masks_from_str(&e.masks_to_string()).unwrap(), masks);
        assert!(masks_from_str("2 3\n1 0 1\n").is_err());
        assert!(e.validate_coverage().is_err());
    }
}
