//! Training loop and inference helpers.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::dataset::{augment, make_batch, AugmentConfig, Batch, Sample};
use crate::error::TrainError;
use crate::loss::{decode_detections, total_loss_node, Detection, GridSpec, LossBreakdown};
use crate::net::{Mode, Model};
use crate::nn::{adam_step, grad_check, AdamConfig, Evaluation, GradCheckOptions, GradCheckReport, ParamStore, Tensor};

/// Losses recorded before the update of iteration `iter`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub location: f64,
    pub confidence: f64,
    pub total: f64,
}

impl LogRecord {
    pub const CSV_HEADER: &'static str = "iter,location_loss,confidence_loss,total_loss";

    pub fn from_breakdown(iter: usize, b: &LossBreakdown) -> Self {
        Self {
            iter,
            location: b.location,
            confidence: b.confidence,
            total: b.total,
        }
    }

    /// Shortest round-trip formatting, so logs compare bitwise.
    pub fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.iter, self.location, self.confidence, self.total)
    }
}

pub fn grid_spec(model: &Model) -> GridSpec {
    let c = model.config();
    GridSpec::new(c.stride, c.alpha)
}

/// Batch for `model`'s input size.
pub fn batch_for(model: &Model, samples: &[Sample]) -> Result<Batch, TrainError> {
    let c = model.config();
    Ok(make_batch(
        samples,
        samples.len(),
        c.input_height,
        c.input_width,
        grid_spec(model),
    )?)
}

/// Forward in training mode, backward, one Adam update and the running
/// statistics update. Returns the loss before the update.
pub fn train_step(model: &mut Model, adam: &mut AdamConfig, batch: &Batch) -> Result<LossBreakdown, TrainError> {
    let mut pass = model.forward_graph(&batch.images, Mode::Train)?;
    let (loss, breakdown) = total_loss_node(&mut pass.graph, pass.grid, &batch.targets)?;
    let params = model.params_mut();
    params.zero_grad();
    pass.graph.backward(loss, params);
    adam_step(params, adam);
    model.apply_batch_stats(&pass.batch_stats);
    Ok(breakdown)
}

/// Loss of `batch` in inference mode, without touching the model.
pub fn evaluate_loss(model: &Model, batch: &Batch) -> Result<LossBreakdown, TrainError> {
    let mut pass = model.forward_graph(&batch.images, Mode::Infer)?;
    Ok(total_loss_node(&mut pass.graph, pass.grid, &batch.targets)?.1)
}

/// Detections for every image of a `B x H x W x 3` batch, in canvas
/// coordinates.
pub fn detect(model: &Model, images: &Tensor, threshold: f64, nms_threshold: f64) -> Result<Vec<Vec<Detection>>, TrainError> {
    let grid = model.forward(images)?;
    let spec = grid_spec(model);
    Ok((0..grid.batch())
        .map(|b| decode_detections(&grid, b, threshold, nms_threshold, spec))
        .collect())
}

/// Finite-difference check of the full training loss of `batch` with respect
/// to the model parameters. `after_backward` may edit the analytic gradients
/// before they are compared.
pub fn network_grad_check(
    model: &Model,
    batch: &Batch,
    opts: &GradCheckOptions,
    mut after_backward: impl FnMut(&mut ParamStore),
) -> Result<GradCheckReport, TrainError> {
    // Validate shapes once so the closure below cannot fail.
    evaluate_loss(model, batch)?;
    let mut store = model.params().clone();
    let report = grad_check(
        &mut store,
        |s, backward| {
            let mut pass = model
                .forward_with(s, &batch.images, Mode::Train)
                .expect("shapes validated");
            let (loss, _) = total_loss_node(&mut pass.graph, pass.grid, &batch.targets).expect("shapes validated");
            if backward {
                pass.graph.backward(loss, s);
                after_backward(s);
            }
            Evaluation {
                loss: pass.graph.value(loss).data()[0],
                kinks: pass.graph.kink_fingerprint(),
            }
        },
        opts,
    );
    Ok(report)
}

/// Draws batches from a dataset and runs [`train_step`] repeatedly.
///
/// The whole run is a pure function of the model, the data, the configs and
/// `seed`.
pub struct Trainer<'a> {
    pub model: Model,
    pub adam: AdamConfig,
    data: &'a [Sample],
    train: TrainConfig,
    augment: AugmentConfig,
    rng: ChaCha8Rng,
    iter: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: Model,
        adam: AdamConfig,
        data: &'a [Sample],
        train: TrainConfig,
        augment: AugmentConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        if data.is_empty() {
            return Err(TrainError::NoData);
        }
        Ok(Self {
            model,
            adam,
            data,
            train,
            augment,
            rng: ChaCha8Rng::seed_from_u64(seed),
            iter: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// Samples for the next iteration. A dataset no larger than the batch
    /// size is used whole, in order.
    fn next_samples(&mut self) -> Vec<Sample> {
        let n = self.data.len();
        let chosen: Vec<usize> = if n <= self.train.batch_size {
            (0..n).collect()
        } else {
            sample_indices(&mut self.rng, n, self.train.batch_size).into_vec()
        };
        let augmenting = self.train.augment && self.augment.any_enabled();
        chosen
            .into_iter()
            .map(|i| {
                if augmenting {
                    augment(&self.data[i], &self.augment, self.rng.gen())
                } else {
                    self.data[i].clone()
                }
            })
            .collect()
    }

    pub fn step(&mut self) -> Result<LogRecord, TrainError> {
        let samples = self.next_samples();
        let batch = batch_for(&self.model, &samples)?;
        let b = train_step(&mut self.model, &mut self.adam, &batch)?;
        let rec = LogRecord::from_breakdown(self.iter, &b);
        self.iter += 1;
        Ok(rec)
    }

    /// Runs `iterations` steps, calling `on_step` after each update.
    pub fn run<F>(&mut self, iterations: usize, mut on_step: F) -> Result<Vec<LogRecord>, TrainError>
    where
        F: FnMut(&LogRecord, &Self) -> Result<(), TrainError>,
    {
        let mut log = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let rec = self.step()?;
            on_step(&rec, self)?;
            log.push(rec);
        }
        Ok(log)
    }
}
