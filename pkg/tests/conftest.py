import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def aleatorizar():
    """Sustituye todos los parámetros (también los inicializados a cero) por valores aleatorios."""
    def _aleatorizar(parametros, rng, escala=0.3):
        for parametro in parametros:
            parametro.data = escala * rng.standard_normal(parametro.shape)
            parametro.zero_grad()
        return parametros
    return _aleatorizar


@pytest.fixture
def salida_temporal(tmp_path, monkeypatch):
    """Directorio de salida aislado vía LOVIC_OUT."""
    monkeypatch.setenv("LOVIC_OUT", str(tmp_path))
    return tmp_path
