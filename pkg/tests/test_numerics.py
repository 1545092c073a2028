import math

import numpy as np
import pytest
from scipy.special import erf

from errores import ErrorConfiguracion, ErrorContrato, ErrorDimension, ErrorLayout, ErrorNumerico
from numerics import (AdamOptimizer, BlockParams, Parameter, ParameterSet, Tensor, attention,
                      grad_check, mse, mul, no_grad, sub, transformer_block, tsum)
from positional import PositionLayout, grid_positions


def atencion_escalar(q, k, v, escala):
    salida = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        puntuaciones = []
        for j in range(k.shape[0]):
            s = 0.0
            for c in range(q.shape[1]):
                s += q[i, c] * k[j, c]
            puntuaciones.append(s * escala)
        maximo = max(puntuaciones)
        pesos = [math.exp(p - maximo) for p in puntuaciones]
        total = sum(pesos)
        for j in range(k.shape[0]):
            for c in range(v.shape[1]):
                salida[i, c] += pesos[j] / total * v[j, c]
    return salida


def test_attention_con_una_clave_devuelve_su_valor(rng):
    q = rng.standard_normal((3, 4))
    k = rng.standard_normal((1, 4))
    v = rng.standard_normal((1, 4))
    salida = attention(q, k, v, 0.5).data
    assert np.allclose(salida, np.repeat(v, 3, axis=0), atol=1e-15)


def test_attention_claves_identicas_promedia_valores(rng):
    q = rng.standard_normal((2, 4))
    k = np.repeat(rng.standard_normal((1, 4)), 5, axis=0)
    v = rng.standard_normal((5, 4))
    salida = attention(q, k, v, 1.0).data
    assert np.allclose(salida, np.repeat(v.mean(axis=0, keepdims=True), 2, axis=0), atol=1e-14)


def test_attention_coincide_con_oraculo_escalar(rng):
    q, k, v = (rng.standard_normal((3, 4)) for _ in range(3))
    salida = attention(q, k, v, 1 / math.sqrt(4)).data
    assert np.max(np.abs(salida - atencion_escalar(q, k, v, 0.5))) < 1e-12


def test_attention_en_la_envolvente_de_los_valores(rng):
    q = 3.0 * rng.standard_normal((2, 6, 6))
    k = 3.0 * rng.standard_normal((2, 9, 6))
    v = rng.standard_normal((2, 9, 6))
    salida = attention(q, k, v, 1.0 / math.sqrt(6)).data
    minimos = v.min(axis=1, keepdims=True)
    maximos = v.max(axis=1, keepdims=True)
    assert np.all(salida >= minimos - 1e-12)
    assert np.all(salida <= maximos + 1e-12)


def test_attention_y_bloque_deterministas_bit_a_bit(rng, aleatorizar):
    q, k, v = rng.standard_normal((4, 6)), rng.standard_normal((7, 6)), rng.standard_normal((7, 6))
    assert np.array_equal(attention(q, k, v, 0.4).data, attention(q, k, v, 0.4).data)
    bloque = BlockParams("b", 12, 2, rng)
    aleatorizar(bloque.parameters(), rng)
    x = Tensor(rng.standard_normal((4, 12)))
    contexto = Tensor(rng.standard_normal((3, 12)))
    posiciones_ctx = PositionLayout(rng.uniform(0, 3, size=(3, 3)))
    a = transformer_block(x, bloque, grid_positions(1, 2, 2), contexto, posiciones_ctx).data
    b = transformer_block(x, bloque, grid_positions(1, 2, 2), contexto, posiciones_ctx).data
    assert np.array_equal(a, b)


def test_attention_formas_incompatibles():
    with pytest.raises(ErrorDimension):
        attention(np.ones((2, 4)), np.ones((3, 5)), np.ones((3, 4)), 1.0)
    with pytest.raises(ErrorDimension):
        attention(np.ones((2, 4)), np.ones((3, 4)), np.ones((2, 4)), 1.0)
    with pytest.raises(ErrorContrato):
        attention(np.ones((2, 4)), np.ones((3, 4)), np.ones((3, 4)), 0.0)


def test_tensor_externo_rechaza_no_finitos():
    with pytest.raises(ErrorNumerico):
        Tensor.from_external([1.0, float("nan")])
    with pytest.raises(ErrorNumerico):
        Tensor.from_external([[float("inf")]])


def test_bloque_sin_entrenar_es_identidad(rng):
    bloque = BlockParams("b", 12, 2, rng)
    x = Tensor(rng.standard_normal((8, 12)))
    salida = transformer_block(x, bloque, grid_positions(2, 2, 2))
    assert np.array_equal(salida.data, x.data)


def test_bloque_equivariante_a_permutaciones(rng, aleatorizar):
    bloque = BlockParams("b", 12, 2, rng)
    aleatorizar(bloque.parameters(), rng)
    x = rng.standard_normal((5, 12))
    coords = rng.uniform(-0.5, 3.5, size=(5, 3))
    salida = transformer_block(Tensor(x), bloque, PositionLayout(coords)).data
    permutacion = rng.permutation(5)
    permutada = transformer_block(Tensor(x[permutacion]), bloque,
                                  PositionLayout(coords[permutacion])).data
    assert np.allclose(permutada, salida[permutacion], atol=1e-12)


def _capa_norma(x):
    centrado = x - x.mean(axis=-1, keepdims=True)
    return centrado / np.sqrt((centrado ** 2).mean(axis=-1, keepdims=True) + 1e-6)


def test_bloque_con_un_token_usa_solo_su_valor(rng, aleatorizar):
    bloque = BlockParams("b", 12, 2, rng)
    aleatorizar(bloque.parameters(), rng)
    x = rng.standard_normal((1, 12))
    salida = transformer_block(Tensor(x), bloque, PositionLayout([(3.0, 1.0, 2.0)])).data

    x1 = x + _capa_norma(x) @ bloque.wv.data @ bloque.wo.data
    oculto = _capa_norma(x1) @ bloque.w1.data + bloque.b1.data
    oculto = oculto * 0.5 * (1.0 + erf(oculto / math.sqrt(2.0)))
    esperado = x1 + oculto @ bloque.w2.data + bloque.b2.data
    assert np.allclose(salida, esperado, atol=1e-12)


def test_bloque_rechaza_posiciones_y_anchos_incorrectos(rng):
    bloque = BlockParams("b", 12, 2, rng)
    with pytest.raises(ErrorLayout):
        transformer_block(Tensor(np.zeros((4, 12))), bloque, grid_positions(1, 1, 3))
    bloque_impar = BlockParams("c", 8, 2, rng)
    with pytest.raises(ErrorConfiguracion):
        transformer_block(Tensor(np.zeros((2, 8))), bloque_impar, grid_positions(1, 1, 2))


def test_bloque_con_contexto_vacio_equivale_a_sin_contexto(rng, aleatorizar):
    bloque = BlockParams("b", 12, 2, rng)
    aleatorizar(bloque.parameters(), rng)
    x = Tensor(rng.standard_normal((4, 12)))
    posiciones = grid_positions(1, 2, 2)
    base = transformer_block(x, bloque, posiciones).data
    vacio = transformer_block(x, bloque, posiciones, context=Tensor(np.zeros((0, 12))),
                              context_positions=PositionLayout.empty()).data
    assert np.array_equal(base, vacio)


def test_grad_check_suma_de_cuadrados(rng):
    p = Parameter("p", rng.standard_normal(6))
    error = grad_check(lambda ps: tsum(mul(ps[0], ps[0])), [p], eps=1e-5)
    assert error < 1e-8
    tsum(mul(p, p)).backward()
    assert np.allclose(p.grad, 2 * p.value)


def test_grad_check_perdida_constante(rng):
    p = Parameter("p", rng.standard_normal(4))
    assert grad_check(lambda ps: tsum(mul(ps[0], 0.0)), [p]) == 0.0
    assert np.array_equal(p.gradient, np.zeros(4))


def test_grad_check_rechaza_perdida_no_escalar_y_eps_fuera_de_rango(rng):
    p = Parameter("p", rng.standard_normal(3))
    with pytest.raises(ErrorContrato):
        grad_check(lambda ps: mul(ps[0], ps[0]), [p])
    with pytest.raises(ErrorContrato):
        grad_check(lambda ps: tsum(ps[0]), [p], eps=1e-3)


def test_grad_check_bloque_transformer(rng, aleatorizar):
    bloque = BlockParams("b", 12, 2, rng)
    aleatorizar(bloque.parameters(), rng)
    x = Tensor(rng.standard_normal((4, 12)))
    objetivo = Tensor(rng.standard_normal((4, 12)))
    posiciones = PositionLayout(rng.uniform(0, 3, size=(4, 3)))

    def perdida(_):
        return mse(transformer_block(x, bloque, posiciones), objetivo)
    assert grad_check(perdida, bloque.parameters(), eps=1e-5) < 1e-4


def test_no_grad_no_registra_grafo():
    p = Parameter("p", np.ones(3))
    with no_grad():
        y = mul(p, p)
    assert not y.requires_grad
    assert mul(p, p).requires_grad


def test_adam_reduce_la_perdida(rng):
    p = Parameter("p", rng.standard_normal(5))
    objetivo = np.arange(5.0)
    optimizador = AdamOptimizer([p], lr=0.05)
    inicial = mse(p, Tensor(objetivo)).item()
    for _ in range(400):
        optimizador.zero_grad()
        perdida = mse(p, Tensor(objetivo))
        perdida.backward()
        optimizador.step()
    assert mse(p, Tensor(objetivo)).item() < 0.01 * inicial


def test_parameter_set_estado_y_duplicados():
    a, b = Parameter("a", np.ones(2)), Parameter("b", np.zeros((2, 2)))
    conjunto = ParameterSet([a, b])
    assert conjunto.names() == ["a", "b"]
    assert conjunto.count() == 6
    with pytest.raises(ErrorConfiguracion):
        conjunto.add(Parameter("a", np.ones(1)))
    estado = conjunto.state()
    estado["a"] = np.array([5.0, 6.0])
    conjunto.load_state(estado)
    assert np.array_equal(a.value, [5.0, 6.0])
    with pytest.raises(ErrorConfiguracion):
        conjunto.load_state({"a": np.ones(3), "b": np.zeros((2, 2))})


def test_gradientes_deterministas(rng):
    p = Parameter("p", rng.standard_normal((3, 3)))
    x = Tensor(rng.standard_normal((4, 3)))
    sub(x @ p, 1.0).sum().backward()
    primero = p.grad.copy()
    p.zero_grad()
    sub(x @ p, 1.0).sum().backward()
    assert np.array_equal(primero, p.grad)
