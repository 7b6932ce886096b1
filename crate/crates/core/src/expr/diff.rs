use super::{ExprError, Func, Node};

fn num(v: f64) -> Node {
    Node::Num(v)
}

fn is_num(n: &Node, v: f64) -> bool {
    matches!(n, Node::Num(x) if *x == v)
}

fn add(a: Node, b: Node) -> Node {
    match (&a, &b) {
        (Node::Num(x), Node::Num(y)) => num(x + y),
        _ if is_num(&a, 0.0) => b,
        _ if is_num(&b, 0.0) => a,
        _ => Node::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (&a, &b) {
        (Node::Num(x), Node::Num(y)) => num(x - y),
        _ if is_num(&b, 0.0) => a,
        _ if is_num(&a, 0.0) => neg(b),
        _ => Node::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (&a, &b) {
        (Node::Num(x), Node::Num(y)) => num(x * y),
        _ if is_num(&a, 0.0) || is_num(&b, 0.0) => num(0.0),
        _ if is_num(&a, 1.0) => b,
        _ if is_num(&b, 1.0) => a,
        _ => Node::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    if is_num(&a, 0.0) {
        return num(0.0);
    }
    if is_num(&b, 1.0) {
        return a;
    }
    Node::Div(Box::new(a), Box::new(b))
}

fn neg(a: Node) -> Node {
    match a {
        Node::Num(x) => num(-x),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

fn pow(a: Node, b: Node) -> Node {
    if is_num(&b, 1.0) {
        return a;
    }
    if is_num(&b, 0.0) {
        return num(1.0);
    }
    Node::Pow(Box::new(a), Box::new(b))
}

fn call(f: Func, a: Node) -> Node {
    Node::Call(f, Box::new(a))
}

/// Symbolic derivative of `node` with respect to variable `var`.
pub(super) fn derive(node: &Node, var: usize) -> Result<Node, ExprError> {
    if !node.depends_on(var) {
        return Ok(num(0.0));
    }
    Ok(match node {
        Node::Num(_) => num(0.0),
        Node::Var(i) => num(if *i == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(derive(a, var)?),
        Node::Add(a, b) => add(derive(a, var)?, derive(b, var)?),
        Node::Sub(a, b) => sub(derive(a, var)?, derive(b, var)?),
        Node::Mul(a, b) => add(
            mul(derive(a, var)?, (**b).clone()),
            mul((**a).clone(), derive(b, var)?),
        ),
        Node::Div(a, b) => {
            let da = derive(a, var)?;
            if !b.depends_on(var) {
                div(da, (**b).clone())
            } else {
                let db = derive(b, var)?;
                div(
                    sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    pow((**b).clone(), num(2.0)),
                )
            }
        }
        Node::Pow(a, b) => {
            if !b.depends_on(var) {
                // d(u^c) = c u^(c-1) u'
                let c = (**b).clone();
                let cm1 = sub(c.clone(), num(1.0));
                mul(mul(c, pow((**a).clone(), cm1)), derive(a, var)?)
            } else {
                // d(u^v) = u^v (v' log u + v u'/u)
                let da = derive(a, var)?;
                let db = derive(b, var)?;
                let inner = add(
                    mul(db, call(Func::Log, (**a).clone())),
                    div(mul((**b).clone(), da), (**a).clone()),
                );
                mul(node.clone(), inner)
            }
        }
        Node::Call(f, a) => {
            let da = derive(a, var)?;
            let u = (**a).clone();
            let outer = match f {
                Func::Exp => call(Func::Exp, u),
                Func::Log => div(num(1.0), u),
                Func::Sin => call(Func::Cos, u),
                Func::Cos => neg(call(Func::Sin, u)),
                Func::Sqrt => div(num(1.0), mul(num(2.0), call(Func::Sqrt, u))),
                Func::Abs => div(u.clone(), call(Func::Abs, u)),
                Func::Cutoff => call(Func::DCutoff, u),
                Func::DCutoff => call(Func::D2Cutoff, u),
                Func::D2Cutoff => return Err(ExprError::NonDifferentiable(f.name().to_string())),
            };
            mul(outer, da)
        }
    })
}
