//! Conventional transmit-then-infer system: compress an image to two floats,
//! send their bits over a precoded PSK link, rebuild and classify.

mod codec;
mod link;
mod psk;

pub use codec::{mse, Autoencoder, Classifier, FitConfig, LATENT_DIM};
pub use link::{
    alternating_optimize, design_for_phases, matched_filter, pga_theta, phased_channel, rate_at, stream_gains,
    stream_mse, sum_rate, waterfilling, wmmse_combiner, zero_forcing, AlternatingConfig, LinkDesign, PgaConfig,
    Transceiver,
};
pub use psk::{gray_decode, gray_encode, psk_ser_approx, q_function, Demodulated, PskScheme, PAYLOAD_BITS};

use rand::Rng;

use crate::error::Result;
use crate::metasurface::add_noise;

/// Trained source codec, classifier and modulation.
#[derive(Clone, Debug)]
pub struct BaselineSystem {
    pub autoencoder: Autoencoder,
    pub classifier: Classifier,
    pub scheme: PskScheme,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkOutcome {
    pub predicted: usize,
    pub symbol_errors: usize,
    pub reconstruction_mse: f64,
    /// Non-finite demodulated values replaced by zero.
    pub replaced: usize,
}

impl BaselineSystem {
    /// Class predicted from the image without any link in between.
    pub fn clean_prediction(&self, image: &[f64]) -> Result<usize> {
        let xh = self.autoencoder.decompress(self.autoencoder.compress(image)?)?;
        self.classifier.predict(&xh)
    }

    /// Compress, modulate, precode, transmit, combine, demodulate,
    /// decompress and classify one image.
    pub fn run<R: Rng + ?Sized>(
        &self,
        link: &Transceiver,
        image: &[f64],
        noise: f64,
        rng: &mut R,
    ) -> Result<LinkOutcome> {
        let latent = self.autoencoder.compress(image)?;
        let z = self.scheme.modulate(latent);
        let s = link.precoder.mul_vec(&z)?;
        let y = add_noise(link.channel.mul_vec(&s)?, noise, rng);
        let z_hat = link.combiner.adjoint_mul_vec(&y)?;
        let symbol_errors = z
            .iter()
            .zip(z_hat.iter())
            .filter(|(a, b)| self.scheme.nearest(**a) != self.scheme.nearest(**b))
            .count();
        let demod = self.scheme.demodulate(&z_hat)?;
        let xh = self.autoencoder.decompress(demod.values)?;
        Ok(LinkOutcome {
            predicted: self.classifier.predict(&xh)?,
            symbol_errors,
            reconstruction_mse: mse(image, &xh),
            replaced: demod.replaced,
        })
    }
}
