//! Fixed vocabulary: one token per integer `0..=162`, then operators,
//! parentheses, `=`, BOS and PAD. Integer tokens have id == value.

use crate::exprgen::Operator;

use super::TinyLmError;

/// Largest value any dataset expression can produce: `(9 + 9) * 9`.
pub const MAX_INT: u32 = 162;

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Int(u32),
    Op(Operator),
    LParen,
    RParen,
    Equals,
    Bos,
    Pad,
}

const OP_BASE: u32 = MAX_INT + 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Vocab;

impl Vocab {
    pub const SIZE: usize = (MAX_INT + 1) as usize + 9;
    pub const BOS: TokenId = OP_BASE + 7;
    pub const PAD: TokenId = OP_BASE + 8;
    pub const EQUALS: TokenId = OP_BASE + 6;

    pub fn size(&self) -> usize {
        Self::SIZE
    }

    pub fn id(&self, token: Token) -> TokenId {
        match token {
            Token::Int(n) => {
                assert!(n <= MAX_INT, "integer {n} outside vocabulary");
                n
            }
            Token::Op(op) => {
                OP_BASE
                    + match op {
                        Operator::Add => 0,
                        Operator::Sub => 1,
                        Operator::Mul => 2,
                        Operator::Div => 3,
                    }
            }
            Token::LParen => OP_BASE + 4,
            Token::RParen => OP_BASE + 5,
            Token::Equals => Self::EQUALS,
            Token::Bos => Self::BOS,
            Token::Pad => Self::PAD,
        }
    }

    pub fn token(&self, id: TokenId) -> Option<Token> {
        Some(match id {
            n if n <= MAX_INT => Token::Int(n),
            n if n < OP_BASE + 4 => Token::Op(Operator::ALL[(n - OP_BASE) as usize]),
            n if n == OP_BASE + 4 => Token::LParen,
            n if n == OP_BASE + 5 => Token::RParen,
            Self::EQUALS => Token::Equals,
            Self::BOS => Token::Bos,
            Self::PAD => Token::Pad,
            _ => return None,
        })
    }

    /// Id of the integer token for `value`, if it is in range.
    pub fn int_id(&self, value: i64) -> Option<TokenId> {
        u32::try_from(value).ok().filter(|v| *v <= MAX_INT)
    }

    pub fn is_operator(&self, id: TokenId) -> bool {
        matches!(self.token(id), Some(Token::Op(_)))
    }

    pub fn lexeme(&self, id: TokenId) -> String {
        match self.token(id) {
            Some(Token::Int(n)) => n.to_string(),
            Some(Token::Op(op)) => op.symbol().to_string(),
            Some(Token::LParen) => "(".into(),
            Some(Token::RParen) => ")".into(),
            Some(Token::Equals) => "=".into(),
            Some(Token::Bos) => "<bos>".into(),
            Some(Token::Pad) => "<pad>".into(),
            None => format!("<unk:{id}>"),
        }
    }

    /// Whitespace-separated lexemes, BOS-prefixed.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, TinyLmError> {
        let mut out = vec![Self::BOS];
        for lexeme in text.split_whitespace() {
            let token = match lexeme {
                "(" => Token::LParen,
                ")" => Token::RParen,
                "=" => Token::Equals,
                s if s.len() == 1 && Operator::from_symbol(s.chars().next().unwrap()).is_some() => {
                    Token::Op(Operator::from_symbol(s.chars().next().unwrap()).unwrap())
                }
                s if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0')) => {
                    match s.parse::<u32>() {
                        Ok(n) if n <= MAX_INT => Token::Int(n),
                        _ => return Err(TinyLmError::UnknownLexeme(s.to_string())),
                    }
                }
                s => return Err(TinyLmError::UnknownLexeme(s.to_string())),
            };
            out.push(self.id(token));
        }
        Ok(out)
    }

    /// Inverse of [`Vocab::tokenize`] on canonical text (BOS and PAD dropped).
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String, TinyLmError> {
        let mut out = String::new();
        for &id in ids {
            match self.token(id) {
                Some(Token::Bos | Token::Pad) => continue,
                Some(_) => {
                    out.push_str(&self.lexeme(id));
                    out.push(' ');
                }
                None => return Err(TinyLmError::UnknownLexeme(format!("id {id}"))),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_prompt() {
        let v = Vocab;
        let ids = v.tokenize("2 + 3 * 3 = ").unwrap();
        let plus = v.id(Token::Op(Operator::Add));
        let times = v.id(Token::Op(Operator::Mul));
        assert_eq!(ids, vec![Vocab::BOS, 2, plus, 3, times, 3, Vocab::EQUALS]);
        assert_eq!(v.detokenize(&ids).unwrap(), "2 + 3 * 3 = ");
    }

    #[test]
    fn empty_and_unknown() {
        let v = Vocab;
        assert_eq!(v.tokenize("").unwrap(), vec![Vocab::BOS]);
        assert!(matches!(v.tokenize("2 ^ 2"), Err(TinyLmError::UnknownLexeme(s)) if s == "^"));
        assert!(v.tokenize("163").is_err());
        assert!(v.tokenize("07").is_err());
        assert!(v.tokenize("2+3").is_err());
    }

    #[test]
    fn bijective_id_map() {
        let v = Vocab;
        for id in 0..Vocab::SIZE as u32 {
            let t = v.token(id).unwrap();
            assert_eq!(v.id(t), id);
        }
        assert!(v.token(Vocab::SIZE as u32).is_none());
        assert_eq!(v.int_id(162), Some(162));
        assert_eq!(v.int_id(163), None);
        assert_eq!(v.int_id(-1), None);
    }
}
