//! `key = value` configuration text.

/// Splits config text into `(line number, key, value)` triples. Blank lines
/// and anything after `#` are ignored.
pub fn key_values(text: &str) -> Result<Vec<(usize, &str, &str)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        out.push((i + 1, k.trim(), v.trim()));
    }
    Ok(out)
}

/// Parses `value` or names the offending key.
pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.trim().parse().map_err(|_| format!("bad value for {key}: `{value}`"))
}

/// Parses a comma- or semicolon-separated list of numbers.
pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, String> {
    value
        .split([',', ';'])
        .map(|v| parse_value(key, v))
        .collect()
}
