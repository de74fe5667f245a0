//! Canonical JSON: object keys sorted, compact, trailing newline.

use serde::Serialize;

use crate::error::Result;

pub fn canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string(&v)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Doc {
        zeta: u8,
        alpha: [u8; 2],
    }

    #[test]
    fn keys_are_sorted() {
        assert_eq!(canonical_string(&Doc { zeta: 1, alpha: [2, 3] }).unwrap(), "{\"alpha\":[2,3],\"zeta\":1}\n");
    }
}
