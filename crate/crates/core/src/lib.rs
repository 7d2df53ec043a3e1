//! Fully-convolutional segmentation networks built from densely connected
//! glance blocks, with the training, evaluation and cost-accounting
//! machinery around them.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod cost;
pub mod dataio;
pub mod error;
pub mod glance;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod params;
pub mod pnm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "PDFNET_NUM_THREADS";

/// Sizes the global worker pool from `n`, else [`THREADS_ENV`], else the
/// number of CPUs. Results never depend on the thread count. Only the first
/// call in a process has an effect; the returned value is the pool size.
pub fn init_threads(n: Option<usize>) -> Result<usize> {
    let n = match n {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))
            })?),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Error::Config("thread count must be positive".into()));
    }
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        b = b.num_threads(n);
    }
    // Fails only if the pool already exists, which is fine.
    let _ = b.build_global();
    Ok(rayon::current_num_threads())
}

/// Six significant digits, fixed notation for ordinary magnitudes and
/// scientific otherwise.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        format!("{:.*}", (5 - mag) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}
