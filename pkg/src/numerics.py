"""
Módulo numerics.py
------------------
Cálculo tensorial denso con diferenciación en modo inverso, suficiente para
transformers pequeños. Todo el resto del sistema se apoya en este módulo.

Funciones principales:
- Tensor / Parameter: arrays float64 con registro del grafo de cálculo.
- attention: atención de producto escalar escalado (sin máscara).
- transformer_block: bloque residual con prenormalización, RoPE en consultas y claves.
- grad_check: compara el gradiente analítico con diferencias finitas centrales.
- AdamOptimizer: optimizador de momentos adaptativos.

Los gradientes se acumulan siempre en el mismo orden (orden topológico del
grafo y orden de registro de los parámetros), de modo que dos ejecuciones con
las mismas entradas dan resultados idénticos bit a bit.
"""
import contextlib
import math

import numpy as np
from scipy.special import erf

from errores import ErrorConfiguracion, ErrorContrato, ErrorDimension, ErrorLayout, ErrorNumerico

# Construcción del grafo activa (se desactiva con no_grad)
_GRAFO_ACTIVO = True

EPS_NORMA = 1e-6
FACTOR_MLP = 4
BASE_ROPE = 10000.0


@contextlib.contextmanager
def no_grad():
    """Desactiva temporalmente el registro del grafo (inferencia y muestreo)."""
    global _GRAFO_ACTIVO  # pylint: disable=global-statement
    anterior = _GRAFO_ACTIVO
    _GRAFO_ACTIVO = False
    try:
        yield
    finally:
        _GRAFO_ACTIVO = anterior


class Tensor:
    """
    Array denso float64 (almacenamiento por filas) con gradiente opcional.

    :param data: Datos convertibles a array de numpy.
    :param requires_grad: Si el tensor participa en la retropropagación.
    """

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = None
        self._prev = ()

    @classmethod
    def from_external(cls, data, requires_grad=False):
        """
        Construye un tensor a partir de datos externos rechazando NaN e infinitos.

        :raises ErrorNumerico: Si algún valor no es finito.
        """
        array = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise ErrorNumerico(f"Datos no finitos en un tensor de forma {array.shape}")
        return cls(array, requires_grad=requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        """Valor escalar del tensor."""
        if self.data.size != 1:
            raise ErrorContrato(f"item() sobre un tensor de forma {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        """Copia sin historial de gradiente."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        """
        Retropropaga desde este tensor.

        :param grad: Gradiente inicial; por defecto 1 (sólo para escalares).
        """
        if grad is None:
            if self.data.size != 1:
                raise ErrorContrato("backward() sin gradiente requiere un tensor escalar")
            grad = np.ones_like(self.data)
        orden = []
        visitados = set()
        pila = [(self, False)]
        while pila:
            nodo, expandido = pila.pop()
            if expandido:
                orden.append(nodo)
                continue
            if id(nodo) in visitados:
                continue
            visitados.add(id(nodo))
            pila.append((nodo, True))
            for padre in reversed(nodo._prev):
                if id(padre) not in visitados:
                    pila.append((padre, False))

        _acumular(self, np.asarray(grad, dtype=np.float64))
        for nodo in reversed(orden):
            if nodo._backward is not None and nodo.grad is not None:
                nodo._backward(nodo.grad)

    # Operadores aritméticos
    def __add__(self, otro):
        return add(self, otro)

    def __radd__(self, otro):
        return add(otro, self)

    def __sub__(self, otro):
        return sub(self, otro)

    def __rsub__(self, otro):
        return sub(otro, self)

    def __mul__(self, otro):
        return mul(self, otro)

    def __rmul__(self, otro):
        return mul(otro, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, escalar):
        if isinstance(escalar, Tensor):
            raise ErrorContrato("Sólo se admite la división por escalares")
        return mul(self, 1.0 / escalar)

    def __matmul__(self, otro):
        return matmul(self, otro)

    def __getitem__(self, indice):
        return take(self, indice)

    def reshape(self, *forma):
        if len(forma) == 1 and isinstance(forma[0], (tuple, list)):
            forma = tuple(forma[0])
        return reshape(self, forma)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self):
        return mean(self)


class Parameter(Tensor):
    """
    Parámetro entrenable con nombre.

    El gradiente tiene siempre la forma del valor y se pone a cero entre pasos
    de optimización con `zero_grad`.
    """

    def __init__(self, name, value):
        super().__init__(np.array(value, dtype=np.float64, copy=True), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self):
        return self.data

    @property
    def gradient(self):
        return self.grad

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class ParameterSet:
    """Colección ordenada de parámetros; el orden de inserción fija el orden de reducción."""

    def __init__(self, parametros=()):
        self._parametros = {}
        for parametro in parametros:
            self.add(parametro)

    def add(self, parametro):
        if parametro.name in self._parametros:
            raise ErrorConfiguracion(f"Parámetro duplicado: {parametro.name}")
        self._parametros[parametro.name] = parametro
        return parametro

    def extend(self, parametros):
        for parametro in parametros:
            self.add(parametro)

    def __iter__(self):
        return iter(self._parametros.values())

    def __len__(self):
        return len(self._parametros)

    def __getitem__(self, nombre):
        return self._parametros[nombre]

    def __contains__(self, nombre):
        return nombre in self._parametros

    def names(self):
        return list(self._parametros)

    def count(self):
        """Número total de escalares entrenables."""
        return int(sum(p.size for p in self))

    def zero_grad(self):
        for parametro in self:
            parametro.zero_grad()

    def state(self):
        """Copia de los valores: diccionario nombre -> array."""
        return {nombre: p.data.copy() for nombre, p in self._parametros.items()}

    def load_state(self, estado):
        """
        Carga valores desde un diccionario nombre -> array.

        :raises ErrorConfiguracion: Si faltan nombres o las formas no coinciden.
        """
        for nombre, parametro in self._parametros.items():
            if nombre not in estado:
                raise ErrorConfiguracion(f"Falta el parámetro '{nombre}' en el estado")
            valor = np.asarray(estado[nombre], dtype=np.float64)
            if valor.shape != parametro.shape:
                raise ErrorConfiguracion(
                    f"Forma incompatible para '{nombre}': {valor.shape} != {parametro.shape}")
            parametro.data = valor.copy()
            parametro.zero_grad()


def init_normal(nombre, forma, fan_in, rng):
    """Pesos N(0, 1/fan_in)."""
    return Parameter(nombre, rng.standard_normal(forma) / math.sqrt(fan_in))


def init_zeros(nombre, forma):
    return Parameter(nombre, np.zeros(forma))


# ---------------------------------------------------------------------------
# Mecánica del grafo
# ---------------------------------------------------------------------------

def _como_tensor(valor):
    return valor if isinstance(valor, Tensor) else Tensor(valor)


def _acumular(tensor, grad):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        tensor.grad = tensor.grad + grad


def _reducir(grad, forma):
    """Deshace la difusión (broadcasting) sumando sobre los ejes expandidos."""
    while grad.ndim > len(forma):
        grad = grad.sum(axis=0)
    for eje, tam in enumerate(forma):
        if tam == 1 and grad.shape[eje] != 1:
            grad = grad.sum(axis=eje, keepdims=True)
    return grad


def _nodo(data, padres, retro):
    salida = Tensor(data)
    if _GRAFO_ACTIVO and any(p.requires_grad for p in padres):
        salida.requires_grad = True
        salida._prev = tuple(padres)
        salida._backward = retro
    return salida


# ---------------------------------------------------------------------------
# Primitivas diferenciables
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _como_tensor(a), _como_tensor(b)

    def retro(g):
        _acumular(a, _reducir(g, a.shape))
        _acumular(b, _reducir(g, b.shape))
    return _nodo(a.data + b.data, (a, b), retro)


def sub(a, b):
    a, b = _como_tensor(a), _como_tensor(b)

    def retro(g):
        _acumular(a, _reducir(g, a.shape))
        _acumular(b, _reducir(-g, b.shape))
    return _nodo(a.data - b.data, (a, b), retro)


def mul(a, b):
    a, b = _como_tensor(a), _como_tensor(b)

    def retro(g):
        _acumular(a, _reducir(g * b.data, a.shape))
        _acumular(b, _reducir(g * a.data, b.shape))
    return _nodo(a.data * b.data, (a, b), retro)


def matmul(a, b):
    """Producto matricial (admite lotes en los ejes iniciales)."""
    a, b = _como_tensor(a), _como_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ErrorDimension(f"matmul incompatible: {a.shape} @ {b.shape}")

    def retro(g):
        _acumular(a, _reducir(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _acumular(b, _reducir(np.swapaxes(a.data, -1, -2) @ g, b.shape))
    return _nodo(a.data @ b.data, (a, b), retro)


def tsum(a, axis=None, keepdims=False):
    a = _como_tensor(a)

    def retro(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acumular(a, np.broadcast_to(g, a.shape))
    return _nodo(a.data.sum(axis=axis, keepdims=keepdims), (a,), retro)


def mean(a):
    """Media de todos los elementos (escalar)."""
    a = _como_tensor(a)
    return mul(tsum(a), 1.0 / max(a.size, 1))


def reshape(a, forma):
    a = _como_tensor(a)

    def retro(g):
        _acumular(a, g.reshape(a.shape))
    return _nodo(a.data.reshape(forma), (a,), retro)


def transpose(a, ejes):
    a = _como_tensor(a)
    inversa = np.argsort(ejes)

    def retro(g):
        _acumular(a, np.transpose(g, inversa))
    return _nodo(np.transpose(a.data, ejes), (a,), retro)


def concat(tensores, axis=0):
    """Concatena tensores a lo largo de un eje."""
    tensores = [_como_tensor(t) for t in tensores]
    if not tensores:
        raise ErrorContrato("concat() necesita al menos un tensor")
    cortes = np.cumsum([t.shape[axis] for t in tensores])[:-1]

    def retro(g):
        for tensor, trozo in zip(tensores, np.split(g, cortes, axis=axis)):
            _acumular(tensor, trozo)
    return _nodo(np.concatenate([t.data for t in tensores], axis=axis), tensores, retro)


def take(a, indice):
    """Indexación básica (enteros y cortes)."""
    a = _como_tensor(a)

    def retro(g):
        completo = np.zeros_like(a.data)
        completo[indice] += g
        _acumular(a, completo)
    return _nodo(a.data[indice], (a,), retro)


def repeat_rows(vector, n):
    """Replica un vector fila `n` veces: (d,) -> (n, d)."""
    vector = _como_tensor(vector)

    def retro(g):
        _acumular(vector, g.sum(axis=0).reshape(vector.shape))
    return _nodo(np.broadcast_to(vector.data.reshape(1, -1), (n, vector.data.size)).copy(),
                 (vector,), retro)


def softmax(a, axis=-1):
    a = _como_tensor(a)
    desplazado = a.data - a.data.max(axis=axis, keepdims=True)
    exps = np.exp(desplazado)
    probs = exps / exps.sum(axis=axis, keepdims=True)

    def retro(g):
        _acumular(a, probs * (g - (g * probs).sum(axis=axis, keepdims=True)))
    return _nodo(probs, (a,), retro)


def layer_norm(a, eps=EPS_NORMA):
    """Normalización por capa sobre el último eje, sin parámetros afines."""
    a = _como_tensor(a)
    media = a.data.mean(axis=-1, keepdims=True)
    centrado = a.data - media
    sigma = np.sqrt((centrado ** 2).mean(axis=-1, keepdims=True) + eps)
    y = centrado / sigma

    def retro(g):
        g_media = g.mean(axis=-1, keepdims=True)
        gy_media = (g * y).mean(axis=-1, keepdims=True)
        _acumular(a, (g - g_media - y * gy_media) / sigma)
    return _nodo(y, (a,), retro)


def gelu(a):
    """GELU exacta: x·Φ(x)."""
    a = _como_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))

    def retro(g):
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        _acumular(a, g * (cdf + x * pdf))
    return _nodo(x * cdf, (a,), retro)


def rope_rotate(x, cos, sin):
    """
    Rotación por pares intercalados (x_2i, x_2i+1) con ángulos precalculados.

    :param x: Tensor (..., n, d) con d par.
    :param cos: Array (n, d/2) con los cosenos de los ángulos.
    :param sin: Array (n, d/2) con los senos.
    :return: Tensor rotado de la misma forma.
    """
    x = _como_tensor(x)
    if x.shape[-1] % 2:
        raise ErrorConfiguracion(f"RoPE necesita un ancho par, recibido {x.shape[-1]}")
    if cos.shape != (x.shape[-2], x.shape[-1] // 2):
        raise ErrorDimension(f"Tablas RoPE {cos.shape} incompatibles con {x.shape}")
    pares = x.data[..., 0::2]
    impares = x.data[..., 1::2]
    salida = np.empty_like(x.data)
    salida[..., 0::2] = pares * cos - impares * sin
    salida[..., 1::2] = pares * sin + impares * cos

    def retro(g):
        g_par = g[..., 0::2]
        g_impar = g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = g_par * cos + g_impar * sin
        gx[..., 1::2] = -g_par * sin + g_impar * cos
        _acumular(x, gx)
    return _nodo(salida, (x,), retro)


def linear(x, peso, sesgo=None):
    """Capa afín x·W (+ b)."""
    salida = matmul(x, peso)
    return salida if sesgo is None else add(salida, sesgo)


def mse(a, b):
    """Error cuadrático medio sobre todas las coordenadas."""
    if tuple(_como_tensor(a).shape) != tuple(_como_tensor(b).shape):
        raise ErrorContrato(f"mse con formas distintas: {_como_tensor(a).shape} vs "
                            f"{_como_tensor(b).shape}")
    diferencia = sub(a, b)
    return mean(mul(diferencia, diferencia))


# ---------------------------------------------------------------------------
# Atención y bloque transformer
# ---------------------------------------------------------------------------

def attention(queries, keys, values, scale):
    """
    Atención de producto escalar escalado, bidireccional y sin máscara.

    Admite ejes de lote iniciales (por ejemplo cabezas): (..., n_q, d), (..., n_k, d).

    :param scale: Factor multiplicativo de las puntuaciones (> 0).
    :return: Tensor (..., n_q, d_v); cada fila es combinación convexa de las filas de `values`.
    """
    queries, keys, values = _como_tensor(queries), _como_tensor(keys), _como_tensor(values)
    if queries.shape[-1] <= 0:
        raise ErrorContrato("El ancho de la atención debe ser positivo")
    if scale <= 0:
        raise ErrorContrato(f"La escala de la atención debe ser positiva: {scale}")
    if queries.shape[-1] != keys.shape[-1] or keys.shape[-2] != values.shape[-2] \
            or queries.data.ndim != keys.data.ndim or keys.data.ndim != values.data.ndim:
        raise ErrorDimension(
            f"Atención incompatible: q{queries.shape} k{keys.shape} v{values.shape}")
    puntuaciones = mul(matmul(queries, transpose(keys, _ejes_traspuestos(keys))), scale)
    return matmul(softmax(puntuaciones, axis=-1), values)


def _ejes_traspuestos(tensor):
    ejes = list(range(tensor.data.ndim))
    ejes[-1], ejes[-2] = ejes[-2], ejes[-1]
    return tuple(ejes)


class BlockParams:
    """
    Parámetros de un bloque transformer con prenormalización.

    Las proyecciones de salida (`wo`, `w2`, `b2`) se inicializan a cero, de modo
    que un bloque sin entrenar es la identidad.
    """

    def __init__(self, prefijo, d, heads, rng):
        if d % heads:
            raise ErrorConfiguracion(f"d={d} no es divisible entre {heads} cabezas")
        self.heads = heads
        self.d = d
        oculto = FACTOR_MLP * d
        self.wq = init_normal(f"{prefijo}.wq", (d, d), d, rng)
        self.wk = init_normal(f"{prefijo}.wk", (d, d), d, rng)
        self.wv = init_normal(f"{prefijo}.wv", (d, d), d, rng)
        self.wo = init_zeros(f"{prefijo}.wo", (d, d))
        self.w1 = init_normal(f"{prefijo}.w1", (d, oculto), d, rng)
        self.b1 = init_zeros(f"{prefijo}.b1", (oculto,))
        self.w2 = init_zeros(f"{prefijo}.w2", (oculto, d))
        self.b2 = init_zeros(f"{prefijo}.b2", (d,))

    def parameters(self):
        return [self.wq, self.wk, self.wv, self.wo, self.w1, self.b1, self.w2, self.b2]


def _separar_cabezas(x, heads):
    n, d = x.shape
    return transpose(reshape(x, (n, heads, d // heads)), (1, 0, 2))


def transformer_block(tokens, params, positions, context=None, context_positions=None,
                      rope_base=BASE_ROPE):
    """
    Bloque residual: x + attn(norm(x)), después + mlp(norm(·)).

    RoPE se aplica a consultas y claves (nunca a los valores) por cabeza, con
    las posiciones 3D de `positions`. Si se pasa `context`, sus tokens se
    añaden sólo como claves/valores: las consultas son siempre los `tokens`.

    :param tokens: Tensor (n, d).
    :param params: BlockParams del bloque.
    :param positions: PositionLayout con exactamente n posiciones.
    :param context: Tensor (m, d) opcional de tokens sólo clave/valor.
    :param context_positions: PositionLayout con m posiciones.
    :return: Tensor (n, d).
    """
    n, d = tokens.shape
    if len(positions) != n:
        raise ErrorLayout(f"{len(positions)} posiciones para {n} tokens")
    if d != params.d:
        raise ErrorConfiguracion(f"Ancho de tokens {d} distinto del bloque {params.d}")
    d_cabeza = d // params.heads
    if d_cabeza % 6:
        raise ErrorConfiguracion(f"El ancho por cabeza {d_cabeza} no es múltiplo de 6")

    normalizado = layer_norm(tokens)
    consultas = linear(normalizado, params.wq)
    claves = linear(normalizado, params.wk)
    valores = linear(normalizado, params.wv)
    cos_q, sin_q = positions.rope_tables(d_cabeza, rope_base)
    cos_k, sin_k = cos_q, sin_q

    if context is not None and context.shape[0] > 0:
        if context_positions is None or len(context_positions) != context.shape[0]:
            raise ErrorLayout("El contexto necesita una posición por token")
        contexto_norm = layer_norm(context)
        claves = concat([claves, linear(contexto_norm, params.wk)], axis=0)
        valores = concat([valores, linear(contexto_norm, params.wv)], axis=0)
        cos_c, sin_c = context_positions.rope_tables(d_cabeza, rope_base)
        cos_k = np.concatenate([cos_q, cos_c], axis=0)
        sin_k = np.concatenate([sin_q, sin_c], axis=0)

    q = rope_rotate(_separar_cabezas(consultas, params.heads), cos_q, sin_q)
    k = rope_rotate(_separar_cabezas(claves, params.heads), cos_k, sin_k)
    v = _separar_cabezas(valores, params.heads)
    atendido = attention(q, k, v, 1.0 / math.sqrt(d_cabeza))
    fusionado = reshape(transpose(atendido, (1, 0, 2)), (n, d))
    x = add(tokens, linear(fusionado, params.wo))

    oculto = gelu(linear(layer_norm(x), params.w1, params.b1))
    return add(x, linear(oculto, params.w2, params.b2))


# ---------------------------------------------------------------------------
# Verificación y optimización
# ---------------------------------------------------------------------------

def grad_check(loss_fn, params, eps=1e-5):
    """
    Compara el gradiente en modo inverso con diferencias finitas centrales.

    :param loss_fn: Función params -> Tensor escalar.
    :param params: Lista (o ParameterSet) de parámetros a comprobar.
    :param eps: Paso de las diferencias finitas, en [1e-6, 1e-4].
    :return: Máximo error relativo, con denominador max(|analítico|, |numérico|, 1e-8).
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ErrorContrato(f"eps={eps} fuera de [1e-6, 1e-4]")
    params = list(params)
    for parametro in params:
        parametro.zero_grad()
    perdida = loss_fn(params)
    if perdida.data.size != 1:
        raise ErrorContrato(f"La pérdida debe ser escalar, forma {perdida.shape}")
    perdida.backward()
    analiticos = [p.grad.copy() for p in params]

    error_maximo = 0.0
    with no_grad():
        for parametro, analitico in zip(params, analiticos):
            plano = parametro.data.reshape(-1)
            analitico = analitico.reshape(-1)
            for i in range(plano.size):
                original = plano[i]
                plano[i] = original + eps
                f_mas = loss_fn(params).item()
                plano[i] = original - eps
                f_menos = loss_fn(params).item()
                plano[i] = original
                numerico = (f_mas - f_menos) / (2.0 * eps)
                denominador = max(abs(analitico[i]), abs(numerico), 1e-8)
                error_maximo = max(error_maximo, abs(analitico[i] - numerico) / denominador)
    for parametro in params:
        parametro.zero_grad()
    return error_maximo


class AdamOptimizer:
    """Estimación adaptativa de momentos, sin calentamiento."""

    def __init__(self, parameters, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        correccion1 = 1 - self.beta1 ** self.t
        correccion2 = 1 - self.beta2 ** self.t
        for i, parametro in enumerate(self.params):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * parametro.grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * parametro.grad ** 2
            m_hat = self.m[i] / correccion1
            v_hat = self.v[i] / correccion2
            parametro.data = parametro.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for parametro in self.params:
            parametro.zero_grad()
