//! Lipschitz bounds, collinear templates, template statistics and the
//! approximation experiments.

pub mod collinear;
pub mod lipschitz;
pub mod templates;
pub mod universality;

pub use collinear::{collinear_optimize, collinear_scalings, collinear_templates, kkt_residual, CollinearResult};
pub use lipschitz::{
    layer_lipschitz, network_lipschitz, operator_lipschitz_table, softmax_lipschitz_max, spectral_norm_sq,
    LipschitzReport, OperatorBound, SoftmaxBound,
};
pub use templates::{bias_ablation_eval, cosine, template_stats, BiasAblation, Histogram, TemplateStats};
pub use universality::{
    fit_max_affine_1d, median, universality_experiment, MaxAffineFit, Target, UniversalityConfig, UniversalityResult,
    WidthResult,
};
