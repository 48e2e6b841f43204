//! The generator, patch discriminator and expression classifier.

mod classifier;
mod discriminator;
mod generator;

pub use classifier::ClassifierDesc;
pub use discriminator::DiscriminatorDesc;
pub use generator::GeneratorDesc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{init_params, BufferSpec, ParamStore};
use crate::tensor::{Element, NormMode};

pub const G_PREFIX: &str = "G.";
pub const D_PREFIX: &str = "D.";
pub const E_PREFIX: &str = "E.";

pub(crate) fn norm_buffers(mode: NormMode, name: &str, channels: usize) -> Vec<BufferSpec> {
    if mode != NormMode::Batch {
        return Vec::new();
    }
    vec![
        BufferSpec {
            name: format!("{name}.running_mean"),
            len: channels,
            fill: 0,
        },
        BufferSpec {
            name: format!("{name}.running_var"),
            len: channels,
            fill: 1,
        },
    ]
}

/// Descriptors of every network in a bundle. The raw-image baseline has a
/// classifier only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub generator: Option<GeneratorDesc>,
    pub discriminator: Option<DiscriminatorDesc>,
    pub classifier: ClassifierDesc,
}

impl Architecture {
    pub fn ifgan(channels: usize, classes: usize) -> Self {
        Self {
            generator: Some(GeneratorDesc::desk(channels)),
            discriminator: Some(DiscriminatorDesc::desk(channels)),
            classifier: ClassifierDesc::desk(channels, classes),
        }
    }

    pub fn baseline(channels: usize, classes: usize) -> Self {
        Self {
            generator: None,
            discriminator: None,
            classifier: ClassifierDesc::baseline(channels, classes),
        }
    }

    pub fn micro(channels: usize, classes: usize) -> Self {
        Self {
            generator: Some(GeneratorDesc::micro(channels)),
            discriminator: Some(DiscriminatorDesc::micro(channels)),
            classifier: ClassifierDesc::micro(channels, classes),
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.generator.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.generator {
            g.validate()?;
        }
        if let Some(d) = &self.discriminator {
            d.validate()?;
        }
        if self.generator.is_some() != self.discriminator.is_some() {
            return Err(crate::error::config("generator and discriminator must be configured together"));
        }
        self.classifier.validate()
    }

    /// Fresh parameters for every network, all drawn from one seeded stream.
    pub fn init<T: Element>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut specs = Vec::new();
        let mut buffers = Vec::new();
        if let Some(g) = &self.generator {
            let (p, b) = g.param_specs();
            specs.extend(p);
            buffers.extend(b);
        }
        if let Some(d) = &self.discriminator {
            let (p, b) = d.param_specs();
            specs.extend(p);
            buffers.extend(b);
        }
        let (p, b) = self.classifier.param_specs();
        specs.extend(p);
        buffers.extend(b);
        init_params(&specs, &buffers, seed)
    }

    pub fn param_count(&self) -> usize {
        self.generator.as_ref().map_or(0, GeneratorDesc::param_count)
            + self.discriminator.as_ref().map_or(0, DiscriminatorDesc::param_count)
            + self.classifier.param_count()
    }
}
