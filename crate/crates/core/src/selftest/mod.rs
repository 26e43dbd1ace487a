//! The built-in verification suite behind the `gradcheck` and `selftest`
//! commands.

mod cases;
mod oracles;

pub use cases::random_params;
pub use oracles::{
    conv_oracle, identities, lska_oracle, metrics, random_conv_case, separability,
    srfm_transcription, with_unit_attention, OracleCheck,
};

use crate::error::Result;
use crate::gradcheck::{
    gradcheck, gradcheck_with, GradOp, GradcheckConfig, GradcheckReport, Sample,
};

/// Gradient checks for every primitive, every block, and 20 randomly chosen
/// entries of a small end-to-end model.
pub fn gradcheck_battery(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut reports = Vec::new();
    for p in cases::primitives() {
        reports.push(gradcheck(&p, 2, seed)?);
    }
    for b in cases::blocks()? {
        reports.push(gradcheck(b.as_ref(), 2, seed)?);
    }
    let e2e = cases::EndToEnd::new()?;
    let cfg = GradcheckConfig {
        sample: Sample::Total(20),
        ..GradcheckConfig::default()
    };
    reports.push(gradcheck_with(&e2e as &dyn GradOp, 1, seed, &cfg)?);
    Ok(reports)
}

pub fn oracle_battery(seed: u64) -> Result<Vec<OracleCheck>> {
    let mut checks = vec![
        conv_oracle(200, seed)?,
        separability(seed)?,
        srfm_transcription(50, seed)?,
        lska_oracle(20, seed)?,
    ];
    checks.extend(identities(seed)?);
    checks.extend(metrics(seed));
    Ok(checks)
}
