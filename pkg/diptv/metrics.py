"""
Image quality in dB, evaluated on the [0, 255] pixel scale.
"""
import numpy as np

# Returned instead of +inf when the estimate equals the reference.
SNR_CAP = 300.0


def _pair(reference, estimate):
    reference = np.asarray(getattr(reference, "data", reference), dtype=np.float64)
    estimate = np.asarray(getattr(estimate, "data", estimate), dtype=np.float64)
    if reference.shape != estimate.shape:
        raise ValueError(f"Shape mismatch: {reference.shape} vs {estimate.shape}")
    return reference, estimate


def snr_db(reference, estimate):
    """20 log10(||ref|| / ||ref - est||), capped at SNR_CAP."""
    reference, estimate = _pair(reference, estimate)
    ref_norm = np.linalg.norm(reference)
    if ref_norm == 0:
        raise ValueError("SNR is undefined for an all-zero reference")
    err_norm = np.linalg.norm(reference - estimate)
    if err_norm == 0:
        return SNR_CAP
    return float(min(20 * np.log10(ref_norm / err_norm), SNR_CAP))


def psnr_db(reference, estimate, peak=255.0):
    """10 log10(peak^2 N / ||ref - est||^2), capped at SNR_CAP."""
    reference, estimate = _pair(reference, estimate)
    sq_err = np.sum((reference - estimate) ** 2)
    if sq_err == 0:
        return SNR_CAP
    return float(min(10 * np.log10(peak ** 2 * reference.size / sq_err), SNR_CAP))
