use super::{ExprError, Func, Node, PotentialExpr};

/// Parses `text` as an expression over the variables `vars` (in order).
///
/// Precedence, loosest first: `+ -`, `* /`, unary minus, `^`. The power
/// operator is right-associative and its exponent may carry a unary sign,
/// so `-x^2` is `-(x^2)` and `2^-1` is `0.5`.
pub fn parse(text: &str, vars: &[&str]) -> Result<PotentialExpr, ExprError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0, vars };
    p.skip_ws();
    if p.pos == p.src.len() {
        return Err(p.error("empty expression"));
    }
    let root = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(PotentialExpr::new(root, vars.iter().map(|s| s.to_string()).collect()))
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ExprError {
        ExprError::Syntax { offset: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.peek() {
            match c {
                b'+' => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                b'-' => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.peek() {
            match c {
                b'*' => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                b'/' => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let Some(c) = self.peek() else {
            return Err(self.error("unexpected end of input"));
        };
        if c == b'(' {
            self.pos += 1;
            let inner = self.expr()?;
            if self.peek() != Some(b')') {
                return Err(self.error("expected `)`"));
            }
            self.pos += 1;
            return Ok(inner);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self.pos < self.src.len()
                && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
            {
                self.pos += 1;
            }
            let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier");
            if let Some(i) = self.vars.iter().position(|v| *v == name) {
                return Ok(Node::Var(i));
            }
            if let Some(f) = Func::from_name(name) {
                if self.peek() != Some(b'(') {
                    return Err(self.error("expected `(` after function name"));
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                return Ok(Node::Call(f, Box::new(arg)));
            }
            if name == "pi" {
                return Ok(Node::Num(std::f64::consts::PI));
            }
            return Err(ExprError::UnknownIdentifier { name: name.to_string(), offset: start });
        }
        Err(self.error(&format!("unexpected character `{}`", c as char)))
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let s = self.src;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut look = self.pos + 1;
            if look < s.len() && (s[look] == b'+' || s[look] == b'-') {
                look += 1;
            }
            if look < s.len() && s[look].is_ascii_digit() {
                self.pos = look;
                while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).expect("ascii number");
        text.parse::<f64>()
            .map(Node::Num)
            .map_err(|_| ExprError::Syntax { offset: start, message: format!("malformed number `{text}`") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_polynomial_into_expected_tree() {
        let e = parse("1 + x^2", &["x"]).unwrap();
        assert_eq!(
            e.root(),
            &Node::Add(
                Box::new(Node::Num(1.0)),
                Box::new(Node::Pow(Box::new(Node::Var(0)), Box::new(Node::Num(2.0))))
            )
        );
    }

    #[test]
    fn parses_the_circle_well() {
        let e = parse("(x^2+y^2-1)^2*(2+x)", &["x", "y"]).unwrap();
        assert_eq!(e.eval(&[1.0, 1.0]).unwrap(), 3.0);
    }

    #[test]
    fn reports_syntax_error_offset() {
        match parse("1 + * x", &["x"]) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("(1 + x", &["x"]), Err(ExprError::Syntax { offset: 6, .. })));
        assert!(matches!(parse("   ", &["x"]), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x y", &["x", "y"]), Err(ExprError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn reports_unknown_identifiers() {
        assert_eq!(
            parse("1 + z", &["x"]),
            Err(ExprError::UnknownIdentifier { name: "z".into(), offset: 4 })
        );
        assert!(matches!(parse("tan(x)", &["x"]), Err(ExprError::UnknownIdentifier { .. })));
    }

    #[test]
    fn exponent_literals() {
        let e = parse("1.5e-3 + 2E2 + .5", &[]).unwrap();
        assert_eq!(e.eval(&[]).unwrap(), 1.5e-3 + 200.0 + 0.5);
    }
}
