//! Fixture-provider checks shared with the acceptance run.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use coimagine_core::domain::Locale;
use coimagine_core::images::{FixtureProvider, ImageService};
use coimagine_core::Timestamp;

use super::preliminary::fixture_images;

/// Looks up "fried chicken" (en) and "naruto" (ja) twice each on two fresh
/// services. The rank-1 file must come back, identically on both services,
/// and the repeat lookups must not reach the provider.
pub async fn fixture_queries() -> Result<String, String> {
    let mut refs = Vec::new();
    for _ in 0..2 {
        let cache = tempfile::tempdir().unwrap();
        let svc = ImageService::new(
            Arc::new(FixtureProvider::new(fixture_images())),
            cache.path(),
        )
        .map_err(|e| e.to_string())?;
        let mut these = Vec::new();
        for (keyword, locale, dir) in [
            ("fried chicken", Locale::En, "en/fried_chicken"),
            ("naruto", Locale::Ja, "ja/naruto"),
        ] {
            let first = svc
                .search_top_image(keyword, locale, Timestamp::ZERO)
                .await
                .map_err(|e| e.to_string())?;
            let calls = svc.provider_calls();
            let again = svc
                .search_top_image(&keyword.to_uppercase(), locale, Timestamp(5))
                .await
                .map_err(|e| e.to_string())?;
            if svc.provider_calls() != calls {
                return Err(format!("cache hit for `{keyword}` called the provider"));
            }
            if again.local_path != first.local_path {
                return Err(format!("cache hit for `{keyword}` returned another image"));
            }
            let expected = std::fs::read(fixture_images().join(dir).join("1.jpg")).unwrap();
            let stored = std::fs::read(svc.resolve(&first)).map_err(|e| e.to_string())?;
            if stored != expected {
                return Err(format!("`{keyword}` did not return the rank-1 fixture"));
            }
            let name = format!("{}.jpg", hex::encode(Sha256::digest(&expected)));
            if first.local_path.to_str() != Some(name.as_str()) {
                return Err(format!(
                    "`{keyword}` stored as {:?}, not by digest",
                    first.local_path
                ));
            }
            these.push(first);
        }
        if svc.provider_calls() != 2 {
            return Err(format!(
                "{} provider calls for two keywords",
                svc.provider_calls()
            ));
        }
        refs.push(these);
    }
    if refs[0] != refs[1] {
        return Err("two services disagree on the rank-1 images".into());
    }
    Ok(format!(
        "{} and {}",
        refs[0][0].source_url, refs[0][1].source_url
    ))
}
