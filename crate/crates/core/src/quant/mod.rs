//! Simulated quantization and post-training calibration.

pub mod calib;
pub mod grid;
pub mod ptq;
pub mod site;

pub use calib::{adc, adc_params, fcmp, minmax_calibrate, percentile_calibrate, AdcResult, DEGENERATE_WIDTH};
pub use grid::{compute_scale_zp, fake_quantize, fake_quantize_per_channel, Grid, QuantParams, PASS_THROUGH_BITS};
pub use ptq::{
    boundary_refine, calibrate_activations, calibrate_weights, calibration_loss, initial_table, observe_activations,
    pass_through_table, ptq_pipeline, refine_loop, EmaBounds, Method, PtqConfig, PtqOutcome, RefineReport, IO_BITS,
};
pub use site::{
    channel_site, default_measure, is_frequency_site, MeasureType, QuantSite, QuantTable, SiteKind, WeightBounds,
    INPUT_SITE, OUTPUT_SITE,
};
