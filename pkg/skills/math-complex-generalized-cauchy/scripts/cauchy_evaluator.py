import sympy as sp


def evaluate_cauchy_node(f_expr, z_var, a_val, n_derivative):
    """Scale the n-th derivative of the numerator at the pole by 2*pi*i/n!."""
    f_diff = sp.diff(f_expr, z_var, n_derivative)
    f_at_a = f_diff.subs(z_var, a_val)
    result = (2 * sp.I * sp.pi / sp.factorial(n_derivative)) * f_at_a
    return sp.simplify(result)
