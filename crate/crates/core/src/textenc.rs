//! Byte/text encoding helpers shared by the DSL and test-case formats.
//!
//! Template sources are UTF-8 text; raw bytes are written as `\xNN` escapes
//! and a literal backslash as `\\`. Percent-encodings (`%20`, `%00`, ...) are
//! *not* escapes here: they are ordinary bytes that must survive verbatim.

/// Decode `\xNN` / `\\` escapes into raw bytes. Any other byte passes through.
pub fn unescape_bytes(text: &str) -> Result<Vec<u8>, String> {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            match bytes.get(i + 1) {
                Some(b'\\') => {
                    out.push(b'\\');
                    i += 2;
                }
                Some(b'x') | Some(b'X') => {
                    let hi = bytes.get(i + 2).copied();
                    let lo = bytes.get(i + 3).copied();
                    match (hi.and_then(hexval), lo.and_then(hexval)) {
                        (Some(h), Some(l)) => {
                            out.push(h << 4 | l);
                            i += 4;
                        }
                        _ => return Err(format!("invalid \\x escape at byte {i}")),
                    }
                }
                _ => return Err(format!("invalid escape at byte {i}")),
            }
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    Ok(out)
}

fn hexval(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'a'..=b'f' => Some(b - b'a' + 10),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    }
}

/// Render raw bytes as display text: printable ASCII passes through,
/// backslash doubles, everything else becomes `\xNN`.
pub fn escape_bytes(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out
}

/// Truncate display text longer than `max` with a middle ellipsis.
/// Comparison always happens on the full bytes; this is for messages only.
pub fn truncate_middle(text: &str, max: usize) -> String {
    if text.len() <= max {
        return text.to_string();
    }
    let keep = max.saturating_sub(3) / 2;
    let head: String = text.chars().take(keep).collect();
    let tail_start = text.len() - keep;
    let tail: String = text[..]
        .char_indices()
        .skip_while(|(i, _)| *i < tail_start)
        .map(|(_, c)| c)
        .collect();
    format!("{head}...{tail}")
}
