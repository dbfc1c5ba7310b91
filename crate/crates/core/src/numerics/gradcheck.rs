use super::{NumericsError, ParamStore, Tape, Tensor, Var};

type Result<T> = std::result::Result<T, NumericsError>;

fn check_step(h: f64) -> Result<()> {
    if (1e-6..=1e-4).contains(&h) {
        Ok(())
    } else {
        Err(NumericsError::Invalid(format!(
            "finite-difference step {h} outside [1e-6, 1e-4]"
        )))
    }
}

fn scalarize(t: &mut Tape, y: Var) -> Result<Var> {
    if t.value(y).len() == 1 {
        Ok(y)
    } else {
        t.sum_all(y)
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Compares the tape gradient of `sum(f(x))` with central differences and
/// returns `max |analytic − numeric| / max(1, |numeric|)` over all
/// coordinates of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_input(&ParamStore::new(), f, x, h)
}

/// [`grad_check`] for a function that also reads parameters from `store`;
/// only the input `x` is perturbed.
pub fn grad_check_input<F>(store: &ParamStore, f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_step(h)?;
    let eval = |x: Tensor| -> Result<f64> {
        let mut t = Tape::inference(store);
        let v = t.constant(x)?;
        let y = f(&mut t, v)?;
        let y = scalarize(&mut t, y)?;
        Ok(t.value(y).item())
    };

    let mut tape = Tape::new(store);
    let xv = tape.leaf(x.clone().with_grad())?;
    let y = f(&mut tape, xv)?;
    let y = scalarize(&mut tape, y)?;
    let grads = tape.backward(y)?;
    let zeros = vec![0.0; x.len()];
    let analytic = grads.get(xv).unwrap_or(&zeros).to_vec();

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        if !numeric.is_finite() {
            return Err(NumericsError::NonFinite("finite difference".into()));
        }
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Same comparison as [`grad_check`], but over every value of every
/// parameter in `store`. `f` must return a scalar.
pub fn grad_check_params<F>(store: &ParamStore, f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    check_step(h)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::inference(s);
        let y = f(&mut t)?;
        let y = scalarize(&mut t, y)?;
        Ok(t.value(y).item())
    };

    let analytic = {
        let mut tape = Tape::new(store);
        let y = f(&mut tape)?;
        let y = scalarize(&mut tape, y)?;
        let grads = tape.backward(y)?;
        tape.param_grads(&grads).0
    };

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for (id, p) in store.iter() {
        let zeros = vec![0.0; p.tensor.len()];
        let a = analytic
            .iter()
            .find(|(pid, _)| *pid == id)
            .map_or(zeros.as_slice(), |(_, g)| g.as_slice());
        for i in 0..p.tensor.len() {
            let orig = p.tensor.data()[i];
            probe.get_mut(id).tensor.data_mut()[i] = orig + h;
            let fp = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig - h;
            let fm = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(NumericsError::NonFinite("finite difference".into()));
            }
            worst = worst.max(rel_err(a[i], numeric));
        }
    }
    Ok(worst)
}
