import math

import numpy as np
import pytest

from errores import ErrorContrato
from metricas import PSNR_MAXIMO, freeze_first_frame, freeze_last_frame, peak_of, psnr, ssim


def test_psnr_identicos_devuelve_el_maximo(rng):
    a = rng.standard_normal((2, 2, 2, 3))
    assert psnr(a, a, 1.0) == PSNR_MAXIMO


def test_psnr_cero_decibelios():
    a = np.zeros((1, 2, 2, 3))
    assert psnr(a, a + 2.0, 2.0) == pytest.approx(0.0, abs=1e-12)


def test_psnr_oraculo_escalar(rng):
    a, b = rng.standard_normal((2, 3, 3, 4)), rng.standard_normal((2, 3, 3, 4))
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (x - y) ** 2
    esperado = 10.0 * math.log10(1.5 ** 2 / (total / a.size))
    assert abs(psnr(a, b, 1.5) - esperado) < 1e-9


def test_psnr_errores():
    with pytest.raises(ErrorContrato):
        psnr(np.zeros(3), np.zeros(4), 1.0)
    with pytest.raises(ErrorContrato):
        psnr(np.zeros(3), np.ones(3), 0.0)


def test_ssim_identicos_y_distintos(rng):
    a = rng.standard_normal((2, 4, 4, 3))
    assert ssim(a, a, peak_of(a)) == pytest.approx(1.0)
    b = rng.standard_normal((2, 4, 4, 3))
    assert ssim(a, b, peak_of(a, b)) < 0.5


def test_congelar_fotogramas():
    contexto = np.arange(3 * 2 * 2 * 1, dtype=np.float64).reshape(3, 2, 2, 1)
    ultimo = freeze_last_frame(contexto, 4)
    assert ultimo.shape == (4, 2, 2, 1)
    assert all(np.array_equal(f, contexto[-1]) for f in ultimo)
    primero = freeze_first_frame(contexto, 2)
    assert all(np.array_equal(f, contexto[0]) for f in primero)


def test_peak_of():
    assert peak_of(np.array([-3.0, 1.0]), np.array([2.0])) == 3.0
    assert peak_of(np.zeros(2)) == 1.0
