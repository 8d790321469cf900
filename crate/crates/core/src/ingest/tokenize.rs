//! C-style tokenizer for node code snippets.

const OPERATORS_3: [&str; 3] = ["<<=", ">>=", "..."];
const OPERATORS_2: [&str; 19] = [
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=",
];

/// Splits a code snippet into identifiers, numbers, literals and operators.
///
/// Whitespace separates tokens and is dropped. Multi-character C operators
/// are kept whole (`->`, `<<=`); every other punctuation character is its
/// own token. String and character literals are single tokens.
pub fn tokenize(code: &str) -> Vec<String> {
    let chars: Vec<char> = code.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.')
            {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if c == '"' || c == '\'' {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i] != c {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            i = (i + 1).min(chars.len());
            out.push(chars[start..i].iter().collect());
        } else {
            let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
            let op = OPERATORS_3
                .iter()
                .chain(OPERATORS_2.iter())
                .find(|op| rest.starts_with(*op));
            match op {
                Some(op) => {
                    i += op.chars().count();
                    out.push((*op).to_string());
                }
                None => {
                    i += 1;
                    out.push(c.to_string());
                }
            }
        }
    }
    out
}
