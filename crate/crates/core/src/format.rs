//! Fixed-precision number rendering shared by prompts and internals text.

/// Four decimals, with negative zero printed as `0.0000`.
pub fn fixed4(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_decimals() {
        assert_eq!(fixed4(0.5), "0.5000");
        assert_eq!(fixed4(-0.25), "-0.2500");
        assert_eq!(fixed4(-0.00001), "0.0000");
        assert_eq!(fixed4(1.23456), "1.2346");
    }
}
