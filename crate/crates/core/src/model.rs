//! Full detector assembly: backbone pyramid, scale-gated fusion, shared
//! detection head, and the three discriminator families, registered in a
//! fixed order so identical seeds give identical initializations no matter
//! which parts a run actually trains.

use crate::autodiff::{Graph, Var};
use crate::backbone::{BackboneError, BackboneFpn};
use crate::config::ModelConfig;
use crate::detect::{decode_detections, Detection, DetectionHead, LevelMaps, LevelOutputs};
use crate::discriminator::Discriminators;
use crate::fusion::{FusionError, GatedFusion};
use crate::params::{ParamSet, ParamVars};
use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Everything the model computes for one pyramid level of one image.
pub struct LevelForward {
    /// Pyramid feature `(D, H, W)`.
    pub f: Var,
    /// Guidance LTRB `(4, H, W)` in pixels.
    pub guidance: Var,
    /// Merged feature `(D, H, W)`.
    pub m: Var,
    /// Gate weights per branch, present for gate-carrying fusion modes.
    pub gate: Option<Vec<Var>>,
    pub det: LevelOutputs,
    pub stride: usize,
}

pub struct ImageForward {
    pub levels: Vec<LevelForward>,
}

/// The complete network. Parameter registration order is part of the
/// contract: backbone, fusion, head, then discriminators.
pub struct Detector {
    pub cfg: ModelConfig,
    pub backbone: BackboneFpn,
    pub fusion: GatedFusion,
    pub head: DetectionHead,
    pub disc: Discriminators,
}

impl Detector {
    pub fn build(cfg: &ModelConfig, seed: u64) -> (Detector, ParamSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let mut params = ParamSet::new();
        let backbone = BackboneFpn::register(cfg, &mut params, &mut rng);
        let fusion = GatedFusion::register(cfg, &mut params, &mut rng);
        let head = DetectionHead::register(cfg, &mut params, &mut rng);
        let disc = Discriminators::register(cfg, &mut params, &mut rng);
        (
            Detector {
                cfg: cfg.clone(),
                backbone,
                fusion,
                head,
                disc,
            },
            params,
        )
    }

    /// Run the detection path (backbone, guidance, fusion, head) for one
    /// image; discriminator passes are composed separately by the caller.
    pub fn forward(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        image: &ArrayD<f64>,
    ) -> Result<ImageForward, ModelError> {
        let fs = self.backbone.forward(g, pv, &self.cfg, image)?;
        let mut levels = Vec::with_capacity(fs.len());
        for (f, level) in fs.into_iter().zip(self.cfg.levels.iter()) {
            let stride = level.stride;
            let guidance = self.fusion.predict_guidance(g, pv, f, stride as f64);
            let guidance_values = g.value(guidance).clone();
            let (m, gate) = self.fusion.merge(
                g,
                pv,
                self.cfg.fusion,
                f,
                &guidance_values,
                stride as f64,
                self.cfg.tau,
            )?;
            let det = self.head.forward(g, pv, m, stride as f64);
            levels.push(LevelForward { f, guidance, m, gate, det, stride });
        }
        Ok(ImageForward { levels })
    }

    /// Inference-only decode of one image.
    pub fn detect_image(
        &self,
        params: &ParamSet,
        image: &ArrayD<f64>,
        score_threshold: f64,
        nms_iou: f64,
    ) -> Result<Vec<Detection>, ModelError> {
        let mut g = Graph::no_grad();
        let pv = params.bind(&mut g);
        let fwd = self.forward(&mut g, &pv, image)?;
        let maps: Vec<LevelMaps> = fwd
            .levels
            .iter()
            .map(|lv| LevelMaps {
                cls: g.value(lv.det.cls).clone(),
                ctr: g.value(lv.det.ctr).clone(),
                reg: g.value(lv.det.reg).clone(),
                stride: lv.stride,
            })
            .collect();
        Ok(decode_detections(&maps, score_threshold, nms_iou))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FusionMode;
    use ndarray::IxDyn;
    use rand::Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            channels: 16,
            disc_channels: 8,
            gn_groups: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn forward_produces_consistent_shapes() {
        let cfg = tiny_cfg();
        let (model, params) = Detector::build(&cfg, 3);
        let mut g = Graph::no_grad();
        let pv = params.bind(&mut g);
        let image = ArrayD::zeros(IxDyn(&[3, 64, 64]));
        let fwd = model.forward(&mut g, &pv, &image).unwrap();
        assert_eq!(fwd.levels.len(), 3);
        for (lv, spec) in fwd.levels.iter().zip(cfg.levels.iter()) {
            let hw = 64 / spec.stride;
            assert_eq!(g.value(lv.f).shape(), &[16, hw, hw]);
            assert_eq!(g.value(lv.m).shape(), &[16, hw, hw]);
            assert_eq!(g.value(lv.guidance).shape(), &[4, hw, hw]);
            assert_eq!(g.value(lv.det.cls).shape(), &[3, hw, hw]);
            assert_eq!(g.value(lv.det.ctr).shape(), &[1, hw, hw]);
            assert_eq!(g.value(lv.det.reg).shape(), &[4, hw, hw]);
            assert!(g.value(lv.guidance).iter().all(|v| *v >= 0.0 && v.is_finite()));
            assert!(g.value(lv.det.reg).iter().all(|v| *v >= 0.0));
            assert_eq!(lv.gate.as_ref().map(Vec::len), Some(6));
        }
    }

    #[test]
    fn identical_seeds_initialize_identically_across_fusion_modes() {
        let gated = Detector::build(&tiny_cfg(), 11).1;
        let average = Detector::build(
            &ModelConfig { fusion: FusionMode::Average, ..tiny_cfg() },
            11,
        )
        .1;
        assert_eq!(gated.len(), average.len());
        for ((na, va), (nb, vb)) in gated.iter().zip(average.iter()) {
            assert_eq!(na, nb);
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let (model, params) = Detector::build(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let image = ArrayD::from_shape_fn(IxDyn(&[3, 64, 64]), |_| rng.random_range(0.0..1.0));
        let run = || {
            let mut g = Graph::no_grad();
            let pv = params.bind(&mut g);
            let fwd = model.forward(&mut g, &pv, &image).unwrap();
            g.value(fwd.levels[0].det.cls).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fusion_mode_off_passes_features_through() {
        let cfg = ModelConfig { fusion: FusionMode::Off, ..tiny_cfg() };
        let (model, params) = Detector::build(&cfg, 5);
        let mut g = Graph::no_grad();
        let pv = params.bind(&mut g);
        let image = ArrayD::zeros(IxDyn(&[3, 64, 64]));
        let fwd = model.forward(&mut g, &pv, &image).unwrap();
        for lv in &fwd.levels {
            assert_eq!(g.value(lv.m), g.value(lv.f));
            assert!(lv.gate.is_none());
        }
    }

    #[test]
    fn indivisible_image_is_rejected() {
        let cfg = tiny_cfg();
        let (model, params) = Detector::build(&cfg, 5);
        let mut g = Graph::no_grad();
        let pv = params.bind(&mut g);
        let image = ArrayD::zeros(IxDyn(&[3, 60, 64]));
        assert!(model.forward(&mut g, &pv, &image).is_err());
    }
}
