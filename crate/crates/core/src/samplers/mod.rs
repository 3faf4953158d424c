//! Monte Carlo machinery: adaptive MALA chains, tempered SMC, and the
//! exchange sampler for doubly-intractable posteriors.

mod cloud;
mod exchange;
mod mala;
mod smc;
mod target;

pub use cloud::{effective_sample_size, systematic_resample, ParticleCloud};
pub use exchange::{
    exchange_step, run_exchange_chains, ConditionalLikelihood, DoublyIntractable, ExchangeChain,
    AUX_TARGET_ACCEPTANCE, EXCHANGE_TARGET_ACCEPTANCE,
};
pub use mala::{
    adapt_step, evolve, mala_step, run_chains, run_chains_collect, ChainRun, ChainState, SamplerDiagnostics,
    ADAPT_GAIN, TARGET_ACCEPTANCE,
};
pub use smc::{smc_run, SmcConfig, SmcOutput};
pub use target::{gradient_check, BoxTransform, Bound, FnTarget, Supported, Unconstrained, UnnormalizedTarget};
