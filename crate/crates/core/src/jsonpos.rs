//! Minimal position scanner for JSON text.
//!
//! serde_json reports syntax errors with line numbers but semantic checks run
//! on the decoded value. This maps "element `i` of top-level array `key`" back
//! to the 1-based line where that element starts.

pub(crate) fn array_element_line(text: &str, key: &str, index: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut line = 1usize;
    let mut depth = 0usize;
    let mut i = 0usize;
    // Set once the top-level key has been read and we are waiting for its '['.
    let mut armed = false;
    // Depth of the array we are counting elements in.
    let mut target_depth: Option<usize> = None;
    let mut seen = 0usize;
    let mut expecting_element = false;

    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => line += 1,
            b'"' => {
                let start = i + 1;
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    } else if bytes[i] == b'\n' {
                        line += 1;
                    }
                    i += 1;
                }
                let s = &text[start..i.min(text.len())];
                if let Some(d) = target_depth {
                    if depth == d && expecting_element {
                        if seen == index {
                            return Some(line);
                        }
                        seen += 1;
                        expecting_element = false;
                    }
                } else if depth == 1 && s == key {
                    armed = true;
                }
            }
            b'[' | b'{' => {
                if let Some(d) = target_depth {
                    if depth == d && expecting_element {
                        if seen == index {
                            return Some(line);
                        }
                        seen += 1;
                        expecting_element = false;
                    }
                }
                depth += 1;
                if armed && c == b'[' && target_depth.is_none() {
                    target_depth = Some(depth);
                    expecting_element = true;
                    armed = false;
                }
            }
            b']' | b'}' => {
                if target_depth == Some(depth) {
                    return None;
                }
                depth = depth.saturating_sub(1);
            }
            b',' => {
                if target_depth == Some(depth) {
                    expecting_element = true;
                }
            }
            b' ' | b'\t' | b'\r' | b':' => {}
            _ => {
                if let Some(d) = target_depth {
                    if depth == d && expecting_element {
                        if seen == index {
                            return Some(line);
                        }
                        seen += 1;
                        expecting_element = false;
                    }
                }
                if armed && depth == 1 {
                    // key followed by a scalar value, not an array
                    armed = false;
                }
            }
        }
        i += 1;
    }
    None
}
