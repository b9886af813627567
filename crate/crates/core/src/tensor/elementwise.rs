use super::{Element, Tensor4, TensorError};

fn zip_with<T: Element>(
    a: &Tensor4<T>,
    b: &Tensor4<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor4<T>, TensorError> {
    a.check_same_shape(b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor4::from_vec(a.shape(), data)
}

pub fn add<T: Element>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>, TensorError> {
    zip_with(a, b, |x, y| x + y)
}

pub fn sub<T: Element>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>, TensorError> {
    zip_with(a, b, |x, y| x - y)
}

pub fn mul_scalar<T: Element>(a: &Tensor4<T>, k: T) -> Tensor4<T> {
    a.map(|x| x * k)
}

pub fn relu<T: Element>(a: &Tensor4<T>) -> Tensor4<T> {
    a.map(|x| if x > T::zero() { x } else { T::zero() })
}

pub fn clamp01<T: Element>(a: &Tensor4<T>) -> Tensor4<T> {
    a.map(|x| x.max(T::zero()).min(T::one()))
}
