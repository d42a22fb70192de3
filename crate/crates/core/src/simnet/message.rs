//! Octet framing for messages between actors.
//!
//! ```text
//! MSG <KIND>\n
//! <name> <len>\n<len bytes>\n
//! ...
//! ```

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: String,
    pub fields: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameError(pub String);

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bad frame: {}", self.0)
    }
}

impl Message {
    pub fn new(kind: &str) -> Self {
        Message {
            kind: kind.to_string(),
            fields: Vec::new(),
        }
    }

    pub fn with(mut self, name: &str, value: impl AsRef<[u8]>) -> Self {
        self.fields.push((name.to_string(), value.as_ref().to_vec()));
        self
    }

    pub fn field(&self, name: &str) -> Option<&[u8]> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// A field as UTF-8 text, if present and valid.
    pub fn text(&self, name: &str) -> Option<&str> {
        self.field(name).and_then(|v| std::str::from_utf8(v).ok())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("MSG {}\n", self.kind).into_bytes();
        for (name, value) in &self.fields {
            out.extend_from_slice(format!("{name} {}\n", value.len()).as_bytes());
            out.extend_from_slice(value);
            out.push(b'\n');
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        let mut rest = bytes;
        let header = take_line(&mut rest)?;
        let kind = header
            .strip_prefix("MSG ")
            .filter(|k| !k.is_empty() && !k.contains(' '))
            .ok_or_else(|| FrameError(format!("header `{header}`")))?;
        let mut msg = Message::new(kind);
        while !rest.is_empty() {
            let line = take_line(&mut rest)?;
            let (name, len) = line
                .split_once(' ')
                .ok_or_else(|| FrameError(format!("field header `{line}`")))?;
            let len: usize = len.parse().map_err(|_| FrameError(format!("length `{len}`")))?;
            if rest.len() < len + 1 || rest[len] != b'\n' {
                return Err(FrameError(format!("field `{name}` truncated")));
            }
            msg.fields.push((name.to_string(), rest[..len].to_vec()));
            rest = &rest[len + 1..];
        }
        Ok(msg)
    }

    /// Byte range of a field's value within the encoded form.
    pub fn value_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut pos = format!("MSG {}\n", self.kind).len();
        for (n, v) in &self.fields {
            pos += format!("{n} {}\n", v.len()).len();
            if n == name {
                return Some(pos..pos + v.len());
            }
            pos += v.len() + 1;
        }
        None
    }
}

fn take_line<'a>(rest: &mut &'a [u8]) -> Result<&'a str, FrameError> {
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FrameError("missing newline".into()))?;
    let line = std::str::from_utf8(&rest[..end]).map_err(|_| FrameError("non-UTF-8 header".into()))?;
    *rest = &rest[end + 1..];
    Ok(line)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_binary_and_newlines() {
        let m = Message::new("SUBMIT")
            .with("body", "a\nb\n")
            .with("raw", [0u8, 10, 255]);
        let bytes = m.encode();
        assert_eq!(Message::decode(&bytes).unwrap(), m);
        let r = m.value_range("body").unwrap();
        assert_eq!(&bytes[r], b"a\nb\n");
    }

    #[test]
    fn rejects_damage() {
        let bytes = Message::new("X").with("f", "abc").encode();
        assert!(Message::decode(&bytes[..bytes.len() - 2]).is_err());
        assert!(Message::decode(b"HELLO\n").is_err());
        assert!(Message::decode(b"MSG X\nf 9\nabc\n").is_err());
    }
}
