//! Two-stage adversarial training: detection and guidance losses on labeled
//! source images, pixel/instance domain losses on both domains, and the
//! category-level losses in stage two, combined as
//! `L = (L_gui + L_det) + alpha * (L_pix + L_ins + L_cat)` and optimized
//! with momentum SGD. Stage one keeps `L_cat = 0` and trains at the native
//! image scale; stage two adds the category discriminator and multi-scale
//! resizing. Everything is deterministic given the seed.

use crate::autodiff::{Graph, Var};
use crate::config::ModelConfig;
use crate::data::{resize, AnnotatedImage, DomainBatch};
use crate::detect::{assign_targets, detection_loss, LevelOutputs};
use crate::discriminator::{
    build_pseudo_labels, category_consistency_loss, category_discriminability_loss, category_loss,
    instance_domain_loss, max_category_probability, pixel_domain_loss, select_important,
    CategoryItem,
};
use crate::fusion::guidance_loss;
use crate::model::{Detector, ImageForward, ModelError};
use crate::params::{GradBuffer, ParamSet, ParamVars, SgdMomentum};
use ndarray::ArrayD;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Optimization schedule and loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the adversarial terms in the total loss.
    pub alpha: f64,
    pub lambda_dis: f64,
    pub lambda_sim: f64,
    /// Relative confidence threshold for the important-pixel set.
    pub theta_cat: f64,
    /// Gradient reversal scale.
    pub grl_lambda: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    /// Input sides sampled per iteration in stage two; empty keeps native.
    pub multi_scale: Vec<usize>,
    /// Ablation: keep the category discriminator off in stage two.
    pub disable_category: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            lambda_dis: 1.0,
            lambda_sim: 0.1,
            theta_cat: 0.5,
            grl_lambda: 1.0,
            lr: 0.005,
            momentum: 0.9,
            weight_decay: 1e-4,
            stage1_iters: 300,
            stage2_iters: 300,
            multi_scale: vec![96, 128, 160],
            disable_category: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let rates = [
            ("alpha", self.alpha),
            ("lambda_dis", self.lambda_dis),
            ("lambda_sim", self.lambda_sim),
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("grl_lambda", self.grl_lambda),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::BadConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.lr <= 0.0 {
            return Err(TrainError::BadConfig("lr must be positive".into()));
        }
        if !(self.theta_cat > 0.0 && self.theta_cat <= 1.0) {
            return Err(TrainError::BadConfig(format!(
                "theta_cat must lie in (0, 1], got {}",
                self.theta_cat
            )));
        }
        Ok(())
    }

    pub fn total_iters(&self) -> usize {
        self.stage1_iters + self.stage2_iters
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch lacks a {0} image")]
    InvalidBatch(&'static str),
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("non-finite {component} loss at iteration {iteration}")]
    NonFinite { component: String, iteration: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tape handles for every loss component of one batch.
#[derive(Debug)]
pub struct LossTerms {
    pub gui: Var,
    pub cls: Var,
    pub ctr: Var,
    pub reg: Var,
    pub det: Var,
    pub pix: Var,
    pub ins: Var,
    pub dis: Var,
    pub sim: Var,
    pub cat: Var,
    pub total: Var,
    /// Size of the important-pixel set feeding the category losses.
    pub n_selected: usize,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub stage: u8,
    pub image_size: usize,
    pub gui: f64,
    pub cls: f64,
    pub ctr: f64,
    pub reg: f64,
    pub det: f64,
    pub pix: f64,
    pub ins: f64,
    pub dis: f64,
    pub sim: f64,
    pub cat: f64,
    pub total: f64,
    pub n_selected: usize,
    pub grad_norm: f64,
}

/// Build the full batch loss. Detection and guidance terms average over the
/// source images; the domain terms average over all images of both domains;
/// stage one pins the category term to exactly zero.
pub fn total_loss(
    g: &mut Graph,
    pv: &ParamVars,
    model: &Detector,
    batch: &DomainBatch,
    stage: u8,
    tcfg: &TrainConfig,
) -> Result<LossTerms, TrainError> {
    if batch.source.is_empty() {
        return Err(TrainError::InvalidBatch("source"));
    }
    if batch.target.is_empty() {
        return Err(TrainError::InvalidBatch("target"));
    }
    let cfg = &model.cfg;

    let mut forwards: Vec<(&AnnotatedImage, ImageForward)> = Vec::new();
    for img in batch.source.iter().chain(batch.target.iter()) {
        forwards.push((img, model.forward(g, pv, &img.pixels)?));
    }
    let n_src = batch.source.len();
    let n_img = forwards.len();

    // supervised terms on source images
    let mut gui = g.scalar(0.0);
    let mut cls = g.scalar(0.0);
    let mut ctr = g.scalar(0.0);
    let mut reg = g.scalar(0.0);
    for (img, fwd) in forwards.iter().take(n_src) {
        let targets = assign_targets(&img.objects, cfg, img.height(), img.width());
        let outs: Vec<LevelOutputs> = fwd.levels.iter().map(|lv| lv.det).collect();
        let dl = detection_loss(g, &outs, &targets);
        cls = g.add(cls, dl.cls);
        ctr = g.add(ctr, dl.ctr);
        reg = g.add(reg, dl.reg);
        let tuples: Vec<(Var, Var, Var)> = fwd
            .levels
            .iter()
            .zip(targets.iter())
            .map(|(lv, t)| {
                let ltrb = g.constant(t.ltrb.clone());
                let mask = g.constant(t.fg.clone());
                (lv.guidance, ltrb, mask)
            })
            .collect();
        let gl = guidance_loss(g, &tuples);
        gui = g.add(gui, gl);
    }
    let src_norm = 1.0 / n_src as f64;
    gui = g.scale(gui, src_norm);
    cls = g.scale(cls, src_norm);
    ctr = g.scale(ctr, src_norm);
    reg = g.scale(reg, src_norm);
    let cc = g.add(cls, ctr);
    let det = g.add(cc, reg);

    // adversarial domain terms on every image
    let mut pix = g.scalar(0.0);
    let mut ins = g.scalar(0.0);
    for (img, fwd) in &forwards {
        let f_levels: Vec<Var> = fwd.levels.iter().map(|lv| lv.f).collect();
        let m_levels: Vec<Var> = fwd.levels.iter().map(|lv| lv.m).collect();
        let lp = pixel_domain_loss(g, pv, &model.disc.pixel, &f_levels, img.domain, tcfg.grl_lambda);
        let li = instance_domain_loss(g, pv, &model.disc.instance, &m_levels, img.domain, tcfg.grl_lambda);
        pix = g.add(pix, lp);
        ins = g.add(ins, li);
    }
    let img_norm = 1.0 / n_img as f64;
    pix = g.scale(pix, img_norm);
    ins = g.scale(ins, img_norm);

    // category terms, stage two only
    let (dis, sim, cat, n_selected) = if stage >= 2 && !tcfg.disable_category {
        let cls_values: Vec<Vec<ArrayD<f64>>> = forwards
            .iter()
            .map(|(_, fwd)| {
                fwd.levels
                    .iter()
                    .map(|lv| g.value(lv.det.cls).clone())
                    .collect()
            })
            .collect();
        let p_maps: Vec<Vec<ArrayD<f64>>> = cls_values
            .iter()
            .map(|levels| levels.iter().map(max_category_probability).collect())
            .collect();
        let sel = select_important(&p_maps, tcfg.theta_cat);
        let mut items = Vec::new();
        for (i, (img, fwd)) in forwards.iter().enumerate() {
            for (l, lv) in fwd.levels.iter().enumerate() {
                let labels = build_pseudo_labels(&cls_values[i][l], img.domain, &sel.masks[i][l]);
                let m_hat_dis = model.disc.category.forward(g, pv, lv.m);
                let reversed = g.grl(lv.m, tcfg.grl_lambda);
                let m_hat_sim = model.disc.category.forward(g, pv, reversed);
                items.push(CategoryItem {
                    m_hat_dis,
                    m_hat_sim,
                    labels,
                    mask: sel.masks[i][l].clone(),
                });
            }
        }
        let dis = category_discriminability_loss(g, &items);
        let sim = category_consistency_loss(g, &items);
        let cat = category_loss(g, dis, sim, tcfg.lambda_dis, tcfg.lambda_sim);
        (dis, sim, cat, sel.count)
    } else {
        (g.scalar(0.0), g.scalar(0.0), g.scalar(0.0), 0)
    };

    let supervised = g.add(gui, det);
    let pi = g.add(pix, ins);
    let adversarial_sum = g.add(pi, cat);
    let adversarial = g.scale(adversarial_sum, tcfg.alpha);
    let total = g.add(supervised, adversarial);
    Ok(LossTerms { gui, cls, ctr, reg, det, pix, ins, dis, sim, cat, total, n_selected })
}

/// Stepping trainer owning the model, parameters, optimizer, and RNG.
pub struct Trainer {
    pub model: Detector,
    pub params: ParamSet,
    pub opt: SgdMomentum,
    pub rng: ChaCha8Rng,
    /// Completed iterations.
    pub iteration: usize,
    pub tcfg: TrainConfig,
}

impl Trainer {
    pub fn new(mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<Trainer, TrainError> {
        tcfg.validate()?;
        let (model, params) = Detector::build(mcfg, tcfg.seed);
        let opt = SgdMomentum::new(tcfg.lr, tcfg.momentum, tcfg.weight_decay, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
        rng.set_stream(1);
        Ok(Trainer {
            model,
            params,
            opt,
            rng,
            iteration: 0,
            tcfg: tcfg.clone(),
        })
    }

    /// Stage of the next iteration.
    pub fn stage(&self) -> u8 {
        if self.iteration < self.tcfg.stage1_iters {
            1
        } else {
            2
        }
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.tcfg.total_iters()
    }

    /// Draw a batch (one source and one target image), resized in stage two
    /// when multi-scale augmentation is configured.
    fn sample_batch(
        &mut self,
        source: &[AnnotatedImage],
        target: &[AnnotatedImage],
        stage: u8,
    ) -> (DomainBatch, usize) {
        let src = &source[self.rng.random_range(0..source.len())];
        let tgt = &target[self.rng.random_range(0..target.len())];
        let native = src.height();
        let size = if stage >= 2 && !self.tcfg.multi_scale.is_empty() {
            self.tcfg.multi_scale[self.rng.random_range(0..self.tcfg.multi_scale.len())]
        } else {
            native
        };
        let adapt = |img: &AnnotatedImage| {
            if img.height() == size && img.width() == size {
                img.clone()
            } else {
                resize(img, size)
            }
        };
        (
            DomainBatch {
                source: vec![adapt(src)],
                target: vec![adapt(tgt)],
            },
            size,
        )
    }

    /// Run one iteration; aborts with the offending component on any
    /// non-finite loss.
    pub fn step(
        &mut self,
        source: &[AnnotatedImage],
        target: &[AnnotatedImage],
    ) -> Result<MetricsRecord, TrainError> {
        if source.is_empty() {
            return Err(TrainError::EmptyDataset("source"));
        }
        if target.is_empty() {
            return Err(TrainError::EmptyDataset("target"));
        }
        let stage = self.stage();
        let (batch, image_size) = self.sample_batch(source, target, stage);

        let mut g = Graph::new();
        let pv = self.params.bind(&mut g);
        let terms = total_loss(&mut g, &pv, &self.model, &batch, stage, &self.tcfg)?;

        let iteration = self.iteration + 1;
        let component = |g: &Graph, v: Var, name: &str| -> Result<f64, TrainError> {
            let value = g.scalar_value(v);
            if value.is_finite() {
                Ok(value)
            } else {
                Err(TrainError::NonFinite { component: name.to_string(), iteration })
            }
        };
        let record_wo_grad = MetricsRecord {
            iteration,
            stage,
            image_size,
            gui: component(&g, terms.gui, "guidance")?,
            cls: component(&g, terms.cls, "classification")?,
            ctr: component(&g, terms.ctr, "centerness")?,
            reg: component(&g, terms.reg, "regression")?,
            det: component(&g, terms.det, "detection")?,
            pix: component(&g, terms.pix, "pixel-domain")?,
            ins: component(&g, terms.ins, "instance-domain")?,
            dis: component(&g, terms.dis, "category-discriminability")?,
            sim: component(&g, terms.sim, "category-consistency")?,
            cat: component(&g, terms.cat, "category")?,
            total: component(&g, terms.total, "total")?,
            n_selected: terms.n_selected,
            grad_norm: 0.0,
        };

        let grads = g.backward(terms.total);
        let mut buf = GradBuffer::new(&self.params);
        pv.accumulate_grads(&self.params, &grads, &mut buf);
        let grad_norm = buf.l2_norm();
        if !grad_norm.is_finite() {
            return Err(TrainError::NonFinite { component: "gradient".into(), iteration });
        }
        self.opt.step(&mut self.params, &buf);
        self.iteration = iteration;
        Ok(MetricsRecord { grad_norm, ..record_wo_grad })
    }

    /// Run every remaining iteration, invoking `sink` after each one. The
    /// sink's error type only needs to absorb [`TrainError`], so callers can
    /// abort on their own I/O failures.
    pub fn run<F, E>(
        &mut self,
        source: &[AnnotatedImage],
        target: &[AnnotatedImage],
        mut sink: F,
    ) -> Result<Vec<MetricsRecord>, E>
    where
        F: FnMut(&Trainer, &MetricsRecord) -> Result<(), E>,
        E: From<TrainError>,
    {
        let mut log = Vec::with_capacity(self.tcfg.total_iters() - self.iteration);
        while !self.finished() {
            let record = self.step(source, target)?;
            sink(self, &record)?;
            log.push(record);
        }
        Ok(log)
    }
}
