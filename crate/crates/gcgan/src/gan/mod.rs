//! GAN (placeholder).
