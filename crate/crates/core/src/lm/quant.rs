use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear layer whose weight is stored as int8 with one per-tensor scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLinear {
    /// `d_in × d_out`
    pub shape: [usize; 2],
    pub values: Vec<i8>,
    pub scale: f64,
    pub bias: Option<Tensor>,
}

impl QuantizedLinear {
    pub fn dequantize(&self) -> Tensor {
        let data = self.values.iter().map(|&q| f64::from(q) * self.scale).collect();
        Tensor::new(self.shape.to_vec(), data).expect("quantized shape is valid")
    }
}

/// Symmetric per-tensor quantization with `s = max|w| / 127`; an all-zero
/// matrix gets `s = 1`.
pub fn quantize_int8(weight: &Tensor, bias: Option<Tensor>) -> Result<QuantizedLinear> {
    let (d_in, d_out) = weight.dims2()?;
    if let Some(b) = &bias {
        if b.shape() != [d_out] {
            return Err(Error::dim(
                "quantize_int8",
                format!("bias {:?} for weight {:?}", b.shape(), weight.shape()),
            ));
        }
    }
    let max = weight.data().iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let scale = if max == 0.0 { 1.0 } else { max / 127.0 };
    let values = weight
        .data()
        .iter()
        .map(|w| (w / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    Ok(QuantizedLinear {
        shape: [d_in, d_out],
        values,
        scale,
        bias,
    })
}

/// `x · dequantize(q) + bias`.
pub fn dequant_matmul(q: &QuantizedLinear, x: &Tensor) -> Result<Tensor> {
    let y = x.matmul(&q.dequantize())?;
    match &q.bias {
        Some(b) => y.add_bias(b),
        None => Ok(y),
    }
}
