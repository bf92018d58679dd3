/// Lamé parameters `(μ, λ)` from Young's modulus and Poisson's ratio.
pub fn lame_from_young(young: f64, nu: f64) -> (f64, f64) {
    let mu = young / (2.0 * (1.0 + nu));
    let lambda = young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    (mu, lambda)
}

/// `[[∂μ/∂E, ∂μ/∂ν], [∂λ/∂E, ∂λ/∂ν]]`.
pub fn lame_jacobian(young: f64, nu: f64) -> [[f64; 2]; 2] {
    let g = (1.0 + nu) * (1.0 - 2.0 * nu);
    [
        [1.0 / (2.0 * (1.0 + nu)), -young / (2.0 * (1.0 + nu).powi(2))],
        [nu / g, young * (1.0 + 2.0 * nu * nu) / (g * g)],
    ]
}
