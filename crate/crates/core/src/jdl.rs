//! Job description documents.
//!
//! A JDL is an ordered list of `Key = {"v1","v2"};` statements. Only the
//! string and string-list subset is accepted; nested expressions inside
//! `{...}` are rejected. A bare `Key = "v";` statement is read as a
//! one-element list.
//!
//! The canonical text form is what signatures are computed over. The
//! [`hash_input`] of a document is the concatenation, in `HashOrd` order, of
//! the canonical statement of every named key, followed by the canonical
//! `HashOrd` statement itself. The pseudo-key `SJDL` stands for the canonical
//! bytes of a nested signed envelope.

use std::fmt;

use thiserror::Error;

/// Key whose single value lists the signed keys joined by `-`.
pub const HASH_ORD: &str = "HashOrd";
/// Pseudo-key naming the nested envelope inside a `HashOrd` list.
pub const NESTED_KEY: &str = "SJDL";

/// Well-known job description keys.
pub mod keys {
    pub const EXECUTABLE: &str = "Executable";
    pub const ARGUMENTS: &str = "Arguments";
    pub const INPUT_FILE: &str = "InputFile";
    pub const OUTPUT: &str = "Output";
    pub const USER: &str = "User";
    pub const BROKER: &str = "Broker";
    pub const PILOT_IDENTIFIER: &str = "PilotIdentifier";
    pub const SUB_JOB_INDEX: &str = "SubJobIndex";
    pub const SUB_JOB_INPUT_FILE: &str = "SubJobInputFile";
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JdlError {
    #[error("syntax error at byte {pos}: expected {expected}")]
    Syntax { pos: usize, expected: &'static str },
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("invalid key `{0}`")]
    InvalidKey(String),
    #[error("document has no HashOrd entry")]
    MissingHashOrd,
    #[error("malformed HashOrd: {0}")]
    InvalidHashOrd(String),
    #[error("HashOrd names unknown key `{0}`")]
    UnknownKeyInHashOrd(String),
    #[error("HashOrd names SJDL but no nested envelope is present")]
    MissingNestedEnvelope,
}

/// An ordered, duplicate-free list of `(key, values)` statements.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Jdl {
    entries: Vec<(String, Vec<String>)>,
}

/// The exact octets a signature covers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalBytes(Vec<u8>);

impl CanonicalBytes {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.0
    }
}

impl AsRef<[u8]> for CanonicalBytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub fn is_valid_key(key: &str) -> bool {
    let mut chars = key.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_alphanumeric())
}

impl Jdl {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a document from `(key, values)` pairs, applying the same key
    /// checks as [`Jdl::insert`].
    pub fn from_entries<K, V, I>(entries: I) -> Result<Self, JdlError>
    where
        K: Into<String>,
        V: IntoIterator,
        V::Item: Into<String>,
        I: IntoIterator<Item = (K, V)>,
    {
        let mut jdl = Jdl::new();
        for (k, vs) in entries {
            jdl.insert(k, vs.into_iter().map(Into::into).collect())?;
        }
        Ok(jdl)
    }

    /// Appends a statement. Keys must match `[A-Za-z][A-Za-z0-9]*`, must not
    /// repeat, and `SJDL` is reserved.
    pub fn insert(&mut self, key: impl Into<String>, values: Vec<String>) -> Result<(), JdlError> {
        let key = key.into();
        if !is_valid_key(&key) || key == NESTED_KEY {
            return Err(JdlError::InvalidKey(key));
        }
        if self.contains_key(&key) {
            return Err(JdlError::DuplicateKey(key));
        }
        self.entries.push((key, values));
        Ok(())
    }

    /// Replaces the values of an existing key in place, or appends it.
    pub fn set(&mut self, key: &str, values: Vec<String>) -> Result<(), JdlError> {
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some((_, vs)) => {
                *vs = values;
                Ok(())
            }
            None => self.insert(key, values),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<Vec<String>> {
        let idx = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(idx).1)
    }

    pub fn get(&self, key: &str) -> Option<&[String]> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_slice())
    }

    /// First value of `key`, if any.
    pub fn first(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(|v| v.first()).map(String::as_str)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.entries.iter().any(|(k, _)| k == key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The key names listed by `HashOrd`, in order.
    pub fn hash_order(&self) -> Result<Vec<&str>, JdlError> {
        let values = self.get(HASH_ORD).ok_or(JdlError::MissingHashOrd)?;
        let [spec] = values else {
            return Err(JdlError::InvalidHashOrd(format!(
                "expected a single value, found {}",
                values.len()
            )));
        };
        let mut names: Vec<&str> = Vec::new();
        for name in spec.split('-') {
            if !is_valid_key(name) || name == HASH_ORD {
                return Err(JdlError::InvalidHashOrd(format!("bad key name `{name}`")));
            }
            if names.contains(&name) {
                return Err(JdlError::InvalidHashOrd(format!("`{name}` listed twice")));
            }
            names.push(name);
        }
        Ok(names)
    }

    /// True when `key` is named by a well-formed `HashOrd`.
    pub fn is_protected(&self, key: &str) -> bool {
        self.hash_order().map(|o| o.contains(&key)).unwrap_or(false)
    }

    /// Keys present in the document but not covered by `HashOrd`.
    pub fn unprotected_keys(&self) -> Vec<&str> {
        let order = self.hash_order().unwrap_or_default();
        self.keys().filter(|k| *k != HASH_ORD && !order.contains(k)).collect()
    }

    /// Sets `HashOrd` to cover every other key in document order, with
    /// `SJDL` first when `nested` is true.
    pub fn seal(&mut self, nested: bool) {
        self.remove(HASH_ORD);
        let mut names: Vec<&str> = Vec::new();
        if nested {
            names.push(NESTED_KEY);
        }
        names.extend(self.keys());
        let spec = names.join("-");
        self.entries.push((HASH_ORD.to_string(), vec![spec]));
    }

    /// Checks the `HashOrd` invariants: every named key exists, and `SJDL`
    /// appears only when the document sits on top of a nested envelope.
    pub fn validate_hash_ord(&self, nested: bool) -> Result<(), JdlError> {
        for name in self.hash_order()? {
            if name == NESTED_KEY {
                if !nested {
                    return Err(JdlError::MissingNestedEnvelope);
                }
            } else if !self.contains_key(name) {
                return Err(JdlError::UnknownKeyInHashOrd(name.to_string()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Jdl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_jdl(self))
    }
}

impl std::str::FromStr for Jdl {
    type Err = JdlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_jdl(s)
    }
}

fn write_statement(out: &mut String, key: &str, values: &[String]) {
    out.push_str(key);
    out.push_str(" = {");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('"');
        for c in v.chars() {
            if c == '"' || c == '\\' {
                out.push('\\');
            }
            out.push(c);
        }
        out.push('"');
    }
    out.push_str("};\n");
}

/// Canonical text: one `Key = {"v1","v2"};` line per entry, stored order.
pub fn serialize_jdl(jdl: &Jdl) -> String {
    let mut out = String::new();
    for (k, v) in jdl.entries() {
        write_statement(&mut out, k, v);
    }
    out
}

/// Parses a complete JDL document.
pub fn parse_jdl(text: &str) -> Result<Jdl, JdlError> {
    let (jdl, end) = parse_statements(text, 0)?;
    if end != text.len() {
        return Err(JdlError::Syntax {
            pos: end,
            expected: "statement or end of input",
        });
    }
    Ok(jdl)
}

/// Parses statements starting at byte `start` for as long as the next
/// non-whitespace character can begin a key. Returns the document and the
/// position of the first unconsumed non-whitespace byte.
pub(crate) fn parse_statements(text: &str, start: usize) -> Result<(Jdl, usize), JdlError> {
    let mut p = Cursor {
        src: text.as_bytes(),
        pos: start,
    };
    let mut jdl = Jdl::new();
    loop {
        p.skip_ws();
        match p.peek() {
            Some(c) if c.is_ascii_alphabetic() => {
                let key_pos = p.pos;
                let (key, values) = p.statement()?;
                if jdl.contains_key(&key) {
                    return Err(JdlError::DuplicateKey(key));
                }
                jdl.insert(key, values).map_err(|e| match e {
                    JdlError::InvalidKey(_) => JdlError::Syntax {
                        pos: key_pos,
                        expected: "non-reserved key",
                    },
                    other => other,
                })?;
            }
            _ => return Ok((jdl, p.pos)),
        }
    }
}

pub(crate) fn is_ws(c: u8) -> bool {
    matches!(c, b' ' | b'\t' | b'\r' | b'\n')
}

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(is_ws) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8, expected: &'static str) -> Result<(), JdlError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(expected))
        }
    }

    fn err(&self, expected: &'static str) -> JdlError {
        JdlError::Syntax {
            pos: self.pos,
            expected,
        }
    }

    fn key(&mut self) -> Result<String, JdlError> {
        let start = self.pos;
        if !self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
            return Err(self.err("key"));
        }
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        // ASCII-only range, always valid UTF-8.
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn string(&mut self) -> Result<String, JdlError> {
        self.expect(b'"', "string literal")?;
        let mut out = Vec::new();
        loop {
            match self.peek() {
                None => return Err(self.err("closing quote")),
                Some(b'"') => {
                    self.pos += 1;
                    break;
                }
                Some(b'\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some(c @ (b'"' | b'\\')) => {
                            out.push(c);
                            self.pos += 1;
                        }
                        _ => return Err(self.err("escaped quote or backslash")),
                    }
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
        // The input is a &str and escapes only drop ASCII bytes, so the
        // collected bytes remain valid UTF-8.
        String::from_utf8(out).map_err(|_| self.err("UTF-8 string"))
    }

    fn statement(&mut self) -> Result<(String, Vec<String>), JdlError> {
        let key = self.key()?;
        self.expect(b'=', "`=`")?;
        self.skip_ws();
        let values = match self.peek() {
            Some(b'{') => {
                self.pos += 1;
                let mut values = Vec::new();
                self.skip_ws();
                if self.peek() == Some(b'}') {
                    self.pos += 1;
                } else {
                    loop {
                        values.push(self.string()?);
                        self.skip_ws();
                        match self.peek() {
                            Some(b',') => self.pos += 1,
                            Some(b'}') => {
                                self.pos += 1;
                                break;
                            }
                            _ => return Err(self.err("`,` or `}`")),
                        }
                    }
                }
                values
            }
            Some(b'"') => vec![self.string()?],
            _ => return Err(self.err("`{` or string literal")),
        };
        self.expect(b';', "`;`")?;
        Ok((key, values))
    }
}

/// The byte string a signature over `jdl` covers.
///
/// `nested` supplies the canonical bytes substituted for the `SJDL`
/// pseudo-key.
pub fn hash_input(jdl: &Jdl, nested: Option<&[u8]>) -> Result<CanonicalBytes, JdlError> {
    let order = jdl.hash_order()?;
    let mut out = Vec::new();
    let mut stmt = String::new();
    for name in &order {
        if *name == NESTED_KEY {
            out.extend_from_slice(nested.ok_or(JdlError::MissingNestedEnvelope)?);
            continue;
        }
        let values = jdl
            .get(name)
            .ok_or_else(|| JdlError::UnknownKeyInHashOrd(name.to_string()))?;
        stmt.clear();
        write_statement(&mut stmt, name, values);
        out.extend_from_slice(stmt.as_bytes());
    }
    stmt.clear();
    write_statement(&mut stmt, HASH_ORD, jdl.get(HASH_ORD).unwrap_or_default());
    out.extend_from_slice(stmt.as_bytes());
    Ok(CanonicalBytes(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LISTING_INNER: &str = r#"
    Executable = {"cat"};
    Arguments = {"myInputFile"};
    InputFile = {"/catalogue/data/myInputFile"};
    Output = {"stdout","stderr"};
    User = {"testuser"};
    Broker = {"myVO"};
    HashOrd = "Executable-Arguments-InputFile-Output-User-Broker";
"#;

    /// Builds the expected hash input from raw pairs with plain string
    /// formatting, independent of the serializer.
    fn oracle(pairs: &[(&str, &[&str])], order: &[&str], nested: &str) -> String {
        let stmt = |k: &str, vs: &[&str]| {
            let quoted: Vec<String> = vs.iter().map(|v| format!("\"{v}\"")).collect();
            format!("{k} = {{{}}};\n", quoted.join(","))
        };
        let mut s = String::new();
        for name in order {
            if *name == "SJDL" {
                s += nested;
            } else {
                let (_, vs) = pairs.iter().find(|(k, _)| k == name).unwrap();
                s += &stmt(name, vs);
            }
        }
        s + &stmt("HashOrd", &[&order.join("-")])
    }

    #[test]
    fn parses_listing_forms() {
        assert_eq!(
            parse_jdl(r#"Executable = {"cat"};"#).unwrap(),
            Jdl::from_entries([("Executable", ["cat"])]).unwrap()
        );
        assert_eq!(
            parse_jdl(r#"HashOrd = "SJDL-PilotIdentifier";"#).unwrap(),
            Jdl::from_entries([("HashOrd", ["SJDL-PilotIdentifier"])]).unwrap()
        );
        assert_eq!(parse_jdl("").unwrap(), Jdl::new());
        assert_eq!(
            parse_jdl(r#"Output = {"stdout","stderr"};"#).unwrap(),
            Jdl::from_entries([("Output", ["stdout", "stderr"])]).unwrap()
        );
    }

    #[test]
    fn serializes_canonically() {
        let j = Jdl::from_entries([("User", ["testuser"])]).unwrap();
        assert_eq!(serialize_jdl(&j), "User = {\"testuser\"};\n");
        assert_eq!(serialize_jdl(&Jdl::new()), "");
        let j = Jdl::from_entries([("Output", ["stdout", "stderr"])]).unwrap();
        assert_eq!(serialize_jdl(&j), "Output = {\"stdout\",\"stderr\"};\n");
        assert_eq!(parse_jdl(&serialize_jdl(&j)).unwrap(), j);
    }

    #[test]
    fn empty_list_round_trips() {
        let j = parse_jdl("InputFile = { } ;").unwrap();
        assert_eq!(j.get("InputFile"), Some(&[][..]));
        assert_eq!(serialize_jdl(&j), "InputFile = {};\n");
    }

    #[test]
    fn syntax_errors_carry_position() {
        assert_eq!(
            parse_jdl("Executable {\"cat\"};"),
            Err(JdlError::Syntax {
                pos: 11,
                expected: "`=`"
            })
        );
        assert!(matches!(
            parse_jdl("A = {\"x\""),
            Err(JdlError::Syntax {
                expected: "`,` or `}`",
                ..
            })
        ));
        assert!(matches!(
            parse_jdl("A = {\"x\"}"),
            Err(JdlError::Syntax { expected: "`;`", .. })
        ));
        assert!(matches!(parse_jdl("A = {x};"), Err(JdlError::Syntax { .. })));
        assert!(matches!(parse_jdl("1A = \"x\";"), Err(JdlError::Syntax { .. })));
        assert!(matches!(parse_jdl("SJDL = \"x\";"), Err(JdlError::Syntax { .. })));
    }

    #[test]
    fn duplicate_key_rejected() {
        assert_eq!(
            parse_jdl("A = \"x\"; A = \"y\";"),
            Err(JdlError::DuplicateKey("A".into()))
        );
    }

    #[test]
    fn escapes_round_trip() {
        let j = Jdl::from_entries([("A", ["a\"b\\c", "line\nbreak"])]).unwrap();
        let text = serialize_jdl(&j);
        assert_eq!(text, "A = {\"a\\\"b\\\\c\",\"line\nbreak\"};\n");
        assert_eq!(parse_jdl(&text).unwrap(), j);
    }

    #[test]
    fn hash_input_listing_inner() {
        let j = parse_jdl(LISTING_INNER).unwrap();
        let got = hash_input(&j, None).unwrap();
        let expected = "Executable = {\"cat\"};\nArguments = {\"myInputFile\"};\nInputFile = {\"/catalogue/data/myInputFile\"};\nOutput = {\"stdout\",\"stderr\"};\nUser = {\"testuser\"};\nBroker = {\"myVO\"};\nHashOrd = {\"Executable-Arguments-InputFile-Output-User-Broker\"};\n";
        assert_eq!(std::str::from_utf8(got.as_bytes()).unwrap(), expected);
        let pairs: [(&str, &[&str]); 6] = [
            ("Executable", &["cat"]),
            ("Arguments", &["myInputFile"]),
            ("InputFile", &["/catalogue/data/myInputFile"]),
            ("Output", &["stdout", "stderr"]),
            ("User", &["testuser"]),
            ("Broker", &["myVO"]),
        ];
        let order = ["Executable", "Arguments", "InputFile", "Output", "User", "Broker"];
        assert_eq!(oracle(&pairs, &order, ""), expected);
    }

    #[test]
    fn hash_input_outer_layer() {
        let j = parse_jdl("PilotIdentifier = {\"FpK0bE9PJq1zNx\"};\nHashOrd = \"SJDL-PilotIdentifier\";").unwrap();
        let nested = "<SJDL>...</SJDL>";
        let got = hash_input(&j, Some(nested.as_bytes())).unwrap();
        let pairs: [(&str, &[&str]); 1] = [("PilotIdentifier", &["FpK0bE9PJq1zNx"])];
        assert_eq!(
            std::str::from_utf8(got.as_bytes()).unwrap(),
            oracle(&pairs, &["SJDL", "PilotIdentifier"], nested)
        );
        assert_eq!(hash_input(&j, None), Err(JdlError::MissingNestedEnvelope));
    }

    #[test]
    fn hash_input_errors() {
        let j = parse_jdl("User = \"u\"; HashOrd = \"User-Broker\";").unwrap();
        assert_eq!(
            hash_input(&j, None),
            Err(JdlError::UnknownKeyInHashOrd("Broker".into()))
        );
        let j = parse_jdl("User = \"u\";").unwrap();
        assert_eq!(hash_input(&j, None), Err(JdlError::MissingHashOrd));
        let j = parse_jdl("User = \"u\"; HashOrd = {\"User\",\"User\"};").unwrap();
        assert!(matches!(hash_input(&j, None), Err(JdlError::InvalidHashOrd(_))));
        let j = parse_jdl("User = \"u\"; HashOrd = \"User-User\";").unwrap();
        assert!(matches!(hash_input(&j, None), Err(JdlError::InvalidHashOrd(_))));
    }

    #[test]
    fn unprotected_and_seal() {
        let mut j = parse_jdl("User = \"u\"; Extra = \"x\"; HashOrd = \"User\";").unwrap();
        assert_eq!(j.unprotected_keys(), vec!["Extra"]);
        assert!(j.is_protected("User"));
        j.seal(false);
        assert!(j.unprotected_keys().is_empty());
        assert_eq!(j.first(HASH_ORD), Some("User-Extra"));
        assert!(j.validate_hash_ord(false).is_ok());
        j.seal(true);
        assert_eq!(j.first(HASH_ORD), Some("SJDL-User-Extra"));
        assert_eq!(j.validate_hash_ord(false), Err(JdlError::MissingNestedEnvelope));
    }

    fn arb_jdl() -> impl Strategy<Value = Jdl> {
        let key = "[A-Za-z][A-Za-z0-9]{0,8}";
        let value = "[^\u{0}]{0,12}";
        proptest::collection::vec((key, proptest::collection::vec(value, 0..4)), 0..8).prop_map(|pairs| {
            let mut j = Jdl::new();
            for (k, v) in pairs {
                let _ = j.insert(k, v);
            }
            j
        })
    }

    fn reformat(text: &str, seed: &[u8]) -> String {
        // Insert whitespace only around structural tokens outside literals.
        let ws = [" ", "\n", "\t", "  ", "\r\n"];
        let mut out = String::new();
        let mut in_str = false;
        let mut escaped = false;
        let mut i = 0usize;
        for c in text.chars() {
            if in_str {
                out.push(c);
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == '"' {
                    in_str = false;
                }
                continue;
            }
            match c {
                ' ' | '\n' => {
                    out.push_str(ws[seed[i % seed.len()] as usize % ws.len()]);
                    i += 1;
                }
                '{' | '}' | ',' | ';' | '=' => {
                    out.push_str(ws[seed[i % seed.len()] as usize % ws.len()]);
                    out.push(c);
                    i += 1;
                }
                '"' => {
                    in_str = true;
                    out.push(c);
                }
                _ => out.push(c),
            }
        }
        out
    }

    proptest! {
        #[test]
        fn round_trip(j in arb_jdl()) {
            prop_assert_eq!(parse_jdl(&serialize_jdl(&j)).unwrap(), j);
        }

        #[test]
        fn reformatting_preserves_hash_input(mut j in arb_jdl(), seed in proptest::collection::vec(any::<u8>(), 1..16)) {
            j.remove(HASH_ORD);
            prop_assume!(!j.is_empty());
            j.seal(false);
            let text = reformat(&serialize_jdl(&j), &seed);
            let reparsed = parse_jdl(&text).unwrap();
            prop_assert_eq!(hash_input(&reparsed, None).unwrap(), hash_input(&j, None).unwrap());
        }

        #[test]
        fn hash_input_injective_on_signed_fields(
            mut a in arb_jdl(),
            pick in any::<prop::sample::Index>(),
            extra in "[^\u{0}]{0,6}",
        ) {
            a.remove(HASH_ORD);
            prop_assume!(!a.is_empty());
            a.seal(false);
            let keys: Vec<String> = a.keys().filter(|k| *k != HASH_ORD).map(String::from).collect();
            let key = &keys[pick.index(keys.len())];
            let mut b = a.clone();
            let mut vals = b.get(key).unwrap().to_vec();
            vals.push(extra);
            b.set(key, vals).unwrap();
            prop_assert_ne!(hash_input(&a, None).unwrap(), hash_input(&b, None).unwrap());
        }
    }
}
