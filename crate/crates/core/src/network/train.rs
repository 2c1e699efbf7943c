use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{mix_seed, pixels_to_tensor, Mode, Model};
use super::spec::NetworkSpec;
use super::NetworkError;
use crate::nn::{adam_step, softmax_cross_entropy, AdamConfig, AdamMoments};
use crate::render::EdgeMapSample;
use crate::sketch::LabelSet;

const INIT_SALT: u64 = 0x1417;
const SAMPLER_SALT: u64 = 0x5a3b;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    /// Interval of the recorded loss trace.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch: 32,
            steps: 80_000,
            seed: 0,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Summed cross-entropy of every step's batch.
    pub losses: Vec<f64>,
    /// `(step, loss)` every `log_every` steps, starting with step 1.
    pub trace: Vec<(usize, f64)>,
}

/// Step-by-step training loop over an in-memory dataset.
pub struct Trainer<'a> {
    model: Model,
    data: &'a [EdgeMapSample],
    moments: Vec<AdamMoments>,
    sampler: ChaCha8Rng,
    cfg: TrainConfig,
    step: usize,
    report: TrainReport,
}

fn check_dataset(data: &[EdgeMapSample], spec: &NetworkSpec) -> Result<(), NetworkError> {
    if data.is_empty() {
        return Err(NetworkError::EmptyDataset);
    }
    for (i, s) in data.iter().enumerate() {
        if s.side != spec.input_side || s.image.len() != s.side * s.side {
            return Err(NetworkError::ImageSize {
                got: (s.side, s.image.len() / s.side.max(1)),
                want: spec.input_side,
            });
        }
        if let Some(&l) = s.labels.iter().find(|&&l| l as usize >= spec.k) {
            return Err(NetworkError::LabelOutOfRange {
                sample: i,
                label: l as usize,
                k: spec.k,
            });
        }
    }
    Ok(())
}

impl<'a> Trainer<'a> {
    pub fn new(
        data: &'a [EdgeMapSample],
        spec: NetworkSpec,
        labels: LabelSet,
        cfg: TrainConfig,
    ) -> Result<Self, NetworkError> {
        if cfg.batch == 0 {
            return Err(NetworkError::EmptyBatch);
        }
        check_dataset(data, &spec)?;
        let model = Model::init(spec, labels, mix_seed(cfg.seed, INIT_SALT))?;
        Ok(Self::resume(model, data, cfg))
    }

    /// Continues from existing weights with fresh optimizer state.
    pub fn resume(model: Model, data: &'a [EdgeMapSample], cfg: TrainConfig) -> Self {
        let moments = model.params().iter().map(|p| AdamMoments::zeros(p.len())).collect();
        Self {
            model,
            data,
            moments,
            sampler: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SAMPLER_SALT)),
            cfg,
            step: 0,
            report: TrainReport::default(),
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// One optimizer step on a uniformly sampled batch; returns its loss.
    pub fn step(&mut self) -> Result<f64, NetworkError> {
        let side = self.model.spec.input_side;
        let picks: Vec<usize> = (0..self.cfg.batch)
            .map(|_| self.sampler.random_range(0..self.data.len()))
            .collect();
        let images: Vec<&[u8]> = picks.iter().map(|&i| self.data[i].image.as_slice()).collect();
        let x = pixels_to_tensor(&images, side)?;
        let target: Vec<u8> = picks
            .iter()
            .flat_map(|&i| self.data[i].labels.iter().copied())
            .collect();
        self.step += 1;
        let mode = Mode::Train {
            seed: mix_seed(self.cfg.seed, self.step as u64),
        };
        let (logits, cache) = self.model.forward(&x, mode)?;
        let lv = softmax_cross_entropy(&logits, &target)?;
        drop(logits);
        let grads = self.model.backward(cache, &lv.grad)?;
        for ((p, g), m) in self
            .model
            .params_mut()
            .iter_mut()
            .zip(&grads)
            .zip(&mut self.moments)
        {
            adam_step(p.data_mut(), g.data(), m, self.step as u64, &self.cfg.adam);
        }
        self.report.losses.push(lv.loss);
        if (self.step - 1) % self.cfg.log_every.max(1) == 0 {
            self.report.trace.push((self.step, lv.loss));
            log::info!("step {} loss {:.4}", self.step, lv.loss);
        }
        Ok(lv.loss)
    }

    pub fn finish(self) -> (Model, TrainReport) {
        (self.model, self.report)
    }
}

/// Trains a freshly initialized network for `cfg.steps` steps. Fully
/// deterministic given the dataset and `cfg.seed`.
pub fn train(
    data: &[EdgeMapSample],
    spec: NetworkSpec,
    labels: LabelSet,
    cfg: TrainConfig,
) -> Result<(Model, TrainReport), NetworkError> {
    let mut t = Trainer::new(data, spec, labels, cfg)?;
    for _ in 0..cfg.steps {
        t.step()?;
    }
    Ok(t.finish())
}

/// Summed cross-entropy of `model` over `data` in inference mode, each
/// sample forwarded as a batch of one.
pub fn dataset_loss(model: &Model, data: &[EdgeMapSample]) -> Result<f64, NetworkError> {
    check_dataset(data, &model.spec)?;
    let mut total = 0.0;
    for s in data {
        let x = pixels_to_tensor(&[s.image.as_slice()], model.spec.input_side)?;
        let (logits, _) = model.forward(&x, Mode::Infer)?;
        total += softmax_cross_entropy(&logits, &s.labels)?.loss;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::Provenance;

    fn toy_data(n: usize, side: usize, seed: u64) -> Vec<EdgeMapSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut labels = vec![0u8; side * side];
                // A horizontal bar labeled 1 and a vertical bar labeled 2.
                let r = rng.random_range(2..side - 2);
                let c = rng.random_range(2..side - 2);
                for x in 0..side {
                    labels[r * side + x] = 1;
                }
                for y in 0..side {
                    labels[y * side + c] = 2;
                }
                EdgeMapSample::from_labels(
                    side,
                    labels,
                    Provenance {
                        source: format!("toy{i}"),
                        camera: None,
                        depth_tested: false,
                    },
                )
            })
            .collect()
    }

    fn labels3() -> LabelSet {
        LabelSet::new("toy", vec!["bg".into(), "h".into(), "v".into()]).unwrap()
    }

    fn spec() -> NetworkSpec {
        NetworkSpec::from_plan(3, 16, &[4, 8, 8], true).unwrap()
    }

    fn cfg(steps: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            batch: 4,
            steps,
            seed,
            log_every: 10,
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let data = toy_data(6, 16, 1);
        let (m1, r1) = train(&data, spec(), labels3(), cfg(15, 3)).unwrap();
        let (m2, r2) = train(&data, spec(), labels3(), cfg(15, 3)).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        let (_, r3) = train(&data, spec(), labels3(), cfg(15, 4)).unwrap();
        assert_ne!(r1.losses, r3.losses);
        assert_eq!(r1.trace.iter().map(|t| t.0).collect::<Vec<_>>(), [1, 11]);
    }

    #[test]
    fn loss_goes_down() {
        let data = toy_data(6, 16, 2);
        let before = dataset_loss(
            &Model::init(spec(), labels3(), mix_seed(5, INIT_SALT)).unwrap(),
            &data,
        )
        .unwrap();
        let (m, _) = train(&data, spec(), labels3(), cfg(150, 5)).unwrap();
        let after = dataset_loss(&m, &data).unwrap();
        assert!(after < 0.5 * before, "{before} -> {after}");
    }

    #[test]
    fn rejects_bad_data() {
        assert!(matches!(
            train(&[], spec(), labels3(), cfg(1, 0)),
            Err(NetworkError::EmptyDataset)
        ));
        let mut data = toy_data(2, 16, 3);
        data[1].labels[5] = 7;
        data[1].image[5] = 1;
        assert!(matches!(
            train(&data, spec(), labels3(), cfg(1, 0)),
            Err(NetworkError::LabelOutOfRange { sample: 1, label: 7, k: 3 })
        ));
        let small = toy_data(1, 8, 3);
        assert!(matches!(
            train(&small, spec(), labels3(), cfg(1, 0)),
            Err(NetworkError::ImageSize { .. })
        ));
    }
}
