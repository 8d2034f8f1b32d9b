use xchange_sim::PolicySpec;

use crate::ConfigError;

/// Applies a policy label to `base`. Labels are `none` or terms such as
/// `restrict=1` and `incset=2` joined by `,` or `+`. A label sets both
/// policies: a term left out means that policy is off. Timings and other
/// settings come from `base`.
pub fn apply(base: &PolicySpec, spec: &str) -> Result<PolicySpec, ConfigError> {
    let bad = |reason: String| ConfigError::Policy { spec: spec.to_string(), reason };
    let mut p = base.clone();
    p.restrict = None;
    p.payments_per_side = 1;
    let spec_t = spec.trim();
    if spec_t.eq_ignore_ascii_case("none") {
        return Ok(p);
    }
    if spec_t.is_empty() {
        return Err(bad("empty label".into()));
    }
    for term in spec_t.split([',', '+']).map(str::trim).filter(|t| !t.is_empty()) {
        let (key, value) = term.split_once('=').ok_or_else(|| bad(format!("{term:?} is not key=value")))?;
        let n: u32 = value.trim().parse().map_err(|_| bad(format!("{value:?} is not a number")))?;
        match key.trim().to_ascii_lowercase().as_str() {
            "restrict" => p.restrict = (n > 0).then_some(n),
            "incset" | "inc_set" => {
                if n == 0 {
                    return Err(bad("incset must be at least 1".into()));
                }
                p.payments_per_side = n;
            }
            other => return Err(bad(format!("unknown policy {other:?}"))),
        }
    }
    Ok(p)
}

/// The four combinations of RESTRICT(1) and INC_SET(2).
pub const STANDARD: [&str; 4] = ["none", "restrict=1", "incset=2", "restrict=1,incset=2"];
