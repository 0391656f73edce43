//! Stylized two-path model: per-pair lookups compete with a shared
//! bilinear composition channel under gradient flow.

mod flow;
mod jsonl;
mod model;
mod rates;
mod window;

pub use flow::{
    fit_rate, flow_init, integrate_flow, integrate_flow_from, stable_dt, FitWindow, FlowOptions, FlowSchedule, Groups,
    OrderParamTrajectory, BLOWUP,
};
pub use jsonl::{header_line, to_jsonl, trajectory_jsonl, FlowRecord, THEORY_SCHEMA};
pub use model::{
    coupling, forward_paths, order_params, stylized_forward, stylized_gradient_check, stylized_loss,
    stylized_loss_grad, Embedding, StylizedConfig, StylizedParams, StylizedProblem,
};
pub use rates::{measure_memorization_rate, measure_reasoning_rate, window_effect, RateMeasurement, WindowEffect};
pub use window::{
    basin_mc, coupling_constant, coupling_moment_mc, flow_rates, flow_window, half_times, half_times_from,
    memorization_hessian, memorization_parameter_hessian, predict_window, predict_window_from, BasinConfig, BasinPoint,
    MomentEstimate, WindowPrediction, HESSIAN_MAX_D,
};

#[cfg(test)]
mod tests;
