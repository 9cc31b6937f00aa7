//! Numeric literals with π: `2pi/3`, `-pi`, `3*pi/2`, `π/4`, `0.25`.

use std::f64::consts::PI;

pub fn parse_angle(text: &str) -> Result<f64, String> {
    let s: String = text.trim().replace('π', "pi").replace(' ', "");
    if s.is_empty() {
        return Err("empty number".into());
    }
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => {
            let d: f64 = d.parse().map_err(|_| format!("bad denominator in {text:?}"))?;
            if d == 0.0 {
                return Err(format!("zero denominator in {text:?}"));
            }
            (n, d)
        }
        None => (s.as_str(), 1.0),
    };
    let value = if let Some(coef) = num.strip_suffix("pi") {
        let coef = coef.strip_suffix('*').unwrap_or(coef);
        let c = match coef {
            "" | "+" => 1.0,
            "-" => -1.0,
            c => c.parse::<f64>().map_err(|_| format!("bad coefficient in {text:?}"))?,
        };
        c * PI
    } else {
        num.parse::<f64>().map_err(|_| format!("bad number {text:?}"))?
    };
    Ok(value / den)
}

/// Comma-separated coordinates.
pub fn parse_point(text: &str) -> Result<Vec<f64>, String> {
    text.split(',').map(parse_angle).collect()
}

/// Semicolon-separated points.
pub fn parse_points(text: &str) -> Result<Vec<Vec<f64>>, String> {
    text.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(parse_point)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pi_literals() {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(parse_angle("2pi/3").unwrap(), 2.0 * PI / 3.0));
        assert!(close(parse_angle("-pi").unwrap(), -PI));
        assert!(close(parse_angle("3*pi/2").unwrap(), 1.5 * PI));
        assert!(close(parse_angle("π/4").unwrap(), PI / 4.0));
        assert!(close(parse_angle("0.25").unwrap(), 0.25));
        assert!(close(parse_angle("1/2").unwrap(), 0.5));
        assert!(parse_angle("pi/0").is_err());
        assert!(parse_angle("x").is_err());
        assert_eq!(parse_point("pi,0,pi/2").unwrap().len(), 3);
        assert_eq!(parse_points("0,0;pi,pi").unwrap().len(), 2);
    }
}
