use super::load::{parse_value, typed, SpecError};
use crate::runtime::Profile;

pub fn load_profile(bytes: &[u8]) -> Result<Profile, SpecError> {
    let profile: Profile = typed(parse_value(bytes)?, "")?;
    for (name, stats) in &profile.nodes {
        if !(stats.total_ms.is_finite() && stats.total_ms >= 0.0) {
            return Err(SpecError::Schema {
                path: format!("nodes.{name}.total_ms"),
                message: "must be a non-negative number".into(),
            });
        }
    }
    Ok(profile)
}

pub fn save_profile(profile: &Profile) -> String {
    crate::canonical::to_pretty(profile)
}
