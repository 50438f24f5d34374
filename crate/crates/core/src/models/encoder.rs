use super::Latent;
use crate::image::{Image, IMAGE_PIXELS};
use crate::nn::{Activation, Mlp, SeededRng};

pub const ENCODER_DIMS: [usize; 4] = [IMAGE_PIXELS, 128, 64, 16];

/// Image-only encoder into W-space.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub net: Mlp,
}

impl Encoder {
    pub fn init(rng: &mut SeededRng) -> Self {
        Self::with_dims(&ENCODER_DIMS, rng)
    }

    pub fn with_dims(dims: &[usize], rng: &mut SeededRng) -> Self {
        assert_eq!(dims[0], IMAGE_PIXELS);
        Self {
            net: Mlp::init(dims, Activation::Identity, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn encode(&self, x: &Image) -> Latent {
        Latent(self.net.infer(x.pixels()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_is_deterministic_with_sixteen_outputs() {
        let e = Encoder::init(&mut SeededRng::new(3));
        let x = Image::filled(0.4);
        let a = e.encode(&x);
        assert_eq!(a.len(), 16);
        assert_eq!(a, e.encode(&x));
        assert!(a.iter().all(|v| v.is_finite()));
    }
}
