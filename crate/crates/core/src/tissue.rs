//! Layered axial force model for needle insertion into synthetic tissue.
//!
//! Sign convention: the returned force acts along the insertion axis and is
//! negative when it resists advance.
//!
//! An engaged, intact layer loads elastically, `k·d + a·d²` with `d` the
//! indentation into that layer. Once the elastic force reaches the layer's
//! puncture threshold the layer latches as punctured and its elastic term
//! disappears. Punctured layers the shaft passes through add viscous
//! friction `μ·v` and, while advancing, a constant cutting force. Deeper
//! layers are only engaged after every shallower layer has been punctured.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueLayer {
    pub name: String,
    /// m
    pub thickness: f64,
    /// N/m
    pub stiffness_k: f64,
    /// N/m²
    pub stiffness_a: f64,
    /// N
    pub puncture_force: f64,
    /// N·s/m
    pub friction_mu: f64,
    /// N
    pub cutting_f: f64,
}

impl TissueLayer {
    /// Layer whose puncture threshold is reached at `puncture_indentation`.
    pub fn calibrated(
        name: &str,
        thickness: f64,
        stiffness_k: f64,
        stiffness_a: f64,
        puncture_indentation: f64,
        friction_mu: f64,
        cutting_f: f64,
    ) -> Self {
        let d = puncture_indentation;
        Self {
            name: name.into(),
            thickness,
            stiffness_k,
            stiffness_a,
            puncture_force: stiffness_k * d + stiffness_a * d * d,
            friction_mu,
            cutting_f,
        }
    }

    pub fn skin(thickness: f64) -> Self {
        Self::calibrated("skin-superficial", thickness, 600.0, 2.0e5, 0.002, 20.0, 0.3)
    }

    pub fn fibrous(thickness: f64) -> Self {
        Self::calibrated("fibrous", thickness, 500.0, 1.5e5, 0.003, 30.0, 0.5)
    }

    pub fn duct_embedded(thickness: f64) -> Self {
        Self::calibrated("duct-embedded", thickness, 300.0, 1.5e5, 0.0035, 30.0, 0.4)
    }

    pub fn elastic_force(&self, indentation: f64) -> f64 {
        self.stiffness_k * indentation + self.stiffness_a * indentation * indentation
    }

    pub fn validate(&self) -> Result<()> {
        let coeffs = [self.stiffness_k, self.stiffness_a, self.friction_mu, self.cutting_f];
        if !(self.thickness > 0.0)
            || !(self.puncture_force > 0.0)
            || coeffs.iter().any(|c| !(*c >= 0.0) || !c.is_finite())
        {
            return Err(Error::Config(format!(
                "layer '{}': thickness and puncture force must be positive, coefficients non-negative",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TissueSample {
    label: String,
    layers: Vec<TissueLayer>,
    punctured: Vec<bool>,
    puncture_depths: Vec<Option<f64>>,
}

/// Result of one force evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AxialForce {
    pub force: f64,
    /// Layers that latched punctured during this evaluation.
    pub punctured: Vec<usize>,
}

impl TissueSample {
    pub fn new(label: impl Into<String>, layers: Vec<TissueLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("tissue sample needs at least one layer".into()));
        }
        for l in &layers {
            l.validate()?;
        }
        let n = layers.len();
        Ok(Self {
            label: label.into(),
            layers,
            punctured: vec![false; n],
            puncture_depths: vec![None; n],
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn layers(&self) -> &[TissueLayer] {
        &self.layers
    }

    pub fn punctured(&self) -> &[bool] {
        &self.punctured
    }

    /// Tool depth at which each layer latched punctured.
    pub fn puncture_depths(&self) -> &[Option<f64>] {
        &self.puncture_depths
    }

    pub fn total_thickness(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    /// Depth at which layer `index` begins.
    pub fn layer_start(&self, index: usize) -> f64 {
        self.layers[..index].iter().map(|l| l.thickness).sum()
    }

    pub fn axial_force(&mut self, depth: f64, velocity: f64) -> Result<AxialForce> {
        if !(depth >= 0.0) || !depth.is_finite() {
            return Err(Error::Domain(format!("tool depth must be >= 0, got {depth}")));
        }
        if !velocity.is_finite() {
            return Err(Error::Domain("tool velocity must be finite".into()));
        }
        let advancing = velocity >= 0.0;
        let mut force = 0.0;
        let mut events = Vec::new();
        let mut start = 0.0;
        for (i, layer) in self.layers.iter().enumerate() {
            if depth <= start {
                break;
            }
            if !self.punctured[i] {
                if !advancing {
                    break;
                }
                let elastic = layer.elastic_force(depth - start);
                if elastic < layer.puncture_force {
                    force -= elastic;
                    break;
                }
                self.punctured[i] = true;
                self.puncture_depths[i] = Some(depth);
                events.push(i);
            }
            force -= layer.friction_mu * velocity;
            if advancing {
                force -= layer.cutting_f;
            }
            start += layer.thickness;
        }
        Ok(AxialForce {
            force,
            punctured: events,
        })
    }

    pub fn reset(&mut self) {
        self.punctured.iter_mut().for_each(|p| *p = false);
        self.puncture_depths.iter_mut().for_each(|p| *p = None);
    }
}

pub const STANDARD_SETUP_LABELS: [&str; 4] = [
    "2mm skin + 10mm fibrous",
    "2mm skin + 15mm duct-embedded",
    "4mm skin + 10mm fibrous",
    "4mm skin + 15mm duct-embedded",
];

/// The four layered phantoms used for the insertion experiment, in order.
pub fn standard_samples() -> Vec<TissueSample> {
    let stacks = [
        (TissueLayer::skin(0.002), TissueLayer::fibrous(0.010)),
        (TissueLayer::skin(0.002), TissueLayer::duct_embedded(0.015)),
        (TissueLayer::skin(0.004), TissueLayer::fibrous(0.010)),
        (TissueLayer::skin(0.004), TissueLayer::duct_embedded(0.015)),
    ];
    stacks
        .into_iter()
        .zip(STANDARD_SETUP_LABELS)
        .map(|((skin, deep), label)| {
            TissueSample::new(label, vec![skin, deep]).expect("standard layers are valid")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeedleSpec {
    pub diameter: f64,
    pub gauge_label: String,
}

impl NeedleSpec {
    pub fn biopsy_16g() -> Self {
        Self {
            diameter: 0.0017,
            gauge_label: "16G".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diameter > 0.0) {
            return Err(Error::Config("needle diameter must be positive".into()));
        }
        Ok(())
    }
}
