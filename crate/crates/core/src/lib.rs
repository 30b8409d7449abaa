//! Few-shot paired image translation by distilling a shared-latent GAN
//! teacher into a compact encoder-decoder student.
//!
//! Pipeline: [`datagen`] builds paired domains, [`adapt`] trains a source
//! generator and adapts a copy to the target domain, [`augment`] turns the
//! generator pair into a stream of paired samples, [`distill`] trains the
//! student against fine and coarse patch discriminators, and [`metrics`]
//! scores the result.

pub mod adapt;
pub mod augment;
pub mod autograd;
pub mod datagen;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
