"""
Este módulo planifica la compresión de un segmento: cuántos tokens de consulta
se usan y dónde se sitúa cada uno en el espacio (t, h, w).

Funciones principales:
- ratio_at: razón de compresión local en función de la distancia temporal al
  segmento generado (uniforme, lineal o logarítmica).
- plan_queries: reparte las consultas por fotograma (redondeo de mayor resto)
  y las coloca en subrejillas centradas dentro de cada fotograma.
- overall_ratio / continuous_ratio: razón global discreta y su límite continuo.
- format_plan: formato de texto diagnóstico (una línea por consulta).
"""
import math
from dataclasses import dataclass, field

import numpy as np

from errores import ErrorConfiguracion, ErrorContrato, ErrorDominio
from positional import PositionLayout

TIPOS_ESTRATEGIA = ("uniform", "linear", "log")

# Orientación del contexto respecto al segmento generado
PASADO = "past-context"      # el fotograma T-1 es el adyacente
FUTURO = "future-context"    # el fotograma 0 es el adyacente
ORIENTACIONES = (PASADO, FUTURO)
_ALIAS_ORIENTACION = {"past": PASADO, "future": FUTURO, PASADO: PASADO, FUTURO: FUTURO}

# Tolerancia para redondeos de coma flotante en los recuentos
_TOLERANCIA = 1e-9


@dataclass(frozen=True)
class CompressionStrategy:
    """
    Regla de compresión.

    :param kind: 'uniform', 'linear' o 'log'.
    :param r_far: Razón en el fotograma más lejano al segmento generado.
    :param r_near: Razón en el fotograma adyacente al segmento generado.
    """
    kind: str
    r_far: float
    r_near: float

    def __post_init__(self):
        if self.kind not in TIPOS_ESTRATEGIA:
            raise ErrorConfiguracion(f"Estrategia desconocida: {self.kind!r}")
        if not self.r_far >= self.r_near >= 1:
            raise ErrorConfiguracion(
                f"Se requiere r_far ≥ r_near ≥ 1 (r_far={self.r_far}, r_near={self.r_near})")
        if self.kind == "uniform" and self.r_far != self.r_near:
            raise ErrorConfiguracion("La estrategia uniforme requiere r_far = r_near")

    @classmethod
    def uniform(cls, ratio):
        return cls("uniform", float(ratio), float(ratio))

    def __str__(self):
        if self.kind == "uniform":
            return f"uniform:{self.r_far:g}"
        return f"{self.kind}:{self.r_far:g}:{self.r_near:g}"


def parse_strategy(texto):
    """
    Interpreta la gramática `kind[:r_far[:r_near]]`, p. ej. `uniform:8`, `linear:16:1`.

    :raises ErrorConfiguracion: Si el texto no respeta la gramática.
    """
    partes = texto.strip().split(":")
    tipo = partes[0]
    try:
        valores = [float(p) for p in partes[1:]]
    except ValueError as e:
        raise ErrorConfiguracion(f"Estrategia mal formada: {texto!r}") from e
    if tipo == "uniform":
        if len(valores) != 1:
            raise ErrorConfiguracion(f"Use 'uniform:<r>', recibido {texto!r}")
        return CompressionStrategy.uniform(valores[0])
    if len(valores) == 1:
        valores.append(1.0)
    if len(valores) != 2:
        raise ErrorConfiguracion(f"Use '{tipo}:<r_far>:<r_near>', recibido {texto!r}")
    return CompressionStrategy(tipo, valores[0], valores[1])


def normalizar_orientacion(orientacion):
    try:
        return _ALIAS_ORIENTACION[orientacion]
    except KeyError as e:
        raise ErrorConfiguracion(f"Orientación desconocida: {orientacion!r}") from e


def ratio_at(strategy, delta):
    """
    Razón de compresión local.

    :param strategy: CompressionStrategy.
    :param delta: Distancia normalizada al segmento generado (0 = adyacente, 1 = más lejano).
    :return: uniforme r_far; lineal r_near + (r_far - r_near)·δ; log r_near·(r_far/r_near)^δ.
    """
    if not 0.0 <= delta <= 1.0:
        raise ErrorDominio(f"δ={delta} fuera de [0, 1]")
    if strategy.kind == "uniform":
        return strategy.r_far
    if strategy.kind == "linear":
        return strategy.r_near + (strategy.r_far - strategy.r_near) * delta
    return strategy.r_near * (strategy.r_far / strategy.r_near) ** delta


@dataclass(frozen=True)
class CompressionPlan:
    """
    Número de consultas de un segmento y sus posiciones interpoladas.

    Invariantes: sum(per_frame_counts) = n_queries; 1 ≤ n_queries ≤ T·H·W;
    posiciones en orden lexicográfico y dentro de [-0.5, eje - 0.5].
    """
    grid: tuple
    n_queries: int
    positions: PositionLayout
    per_frame_counts: tuple
    strategy: CompressionStrategy = field(default=None, compare=False)
    orientation: str = field(default=PASADO, compare=False)

    def __eq__(self, otro):
        return (isinstance(otro, CompressionPlan) and self.grid == otro.grid
                and self.n_queries == otro.n_queries
                and self.per_frame_counts == otro.per_frame_counts
                and self.positions == otro.positions)

    def __hash__(self):
        return hash((self.grid, self.n_queries, self.per_frame_counts))


def _distancias(T, orientacion):
    if T == 1:
        return np.zeros(1)
    fotogramas = np.arange(T, dtype=np.float64)
    if orientacion == PASADO:
        return (T - 1 - fotogramas) / (T - 1)
    return fotogramas / (T - 1)


def _mayor_resto(brutos, distancias, total, capacidad):
    """
    Redondeo de mayor resto: suelo de cada valor y las unidades restantes para
    las mayores partes fraccionarias; empates hacia la menor distancia.
    """
    base = np.minimum(np.floor(brutos + _TOLERANCIA).astype(np.int64), capacidad)
    restante = int(total - base.sum())
    fracciones = np.round(brutos - base, 12)
    # lexsort ordena por la última clave primero
    orden = np.lexsort((np.arange(len(brutos)), distancias, -fracciones))
    for indice in orden:
        if restante <= 0:
            break
        if base[indice] < capacidad:
            base[indice] += 1
            restante -= 1
    return base


def _factorizar(n, H, W):
    """Par de divisores (n_h, n_w) de n con n_h/n_w más próximo a H/W; empates a n_h mayor."""
    mejor, mejor_error = (n, 1), math.inf
    for n_h in range(n, 0, -1):
        if n % n_h:
            continue
        n_w = n // n_h
        error = abs(n_h / n_w - H / W)
        if error < mejor_error - 1e-12:
            mejor, mejor_error = (n_h, n_w), error
    return mejor


def plan_queries(grid, strategy, orientation=PASADO):
    """
    Calcula el CompressionPlan de un segmento.

    :param grid: (T, H, W) del segmento, todos ≥ 1.
    :param strategy: CompressionStrategy.
    :param orientation: PASADO (el contexto precede al segmento generado) o FUTURO.
    :return: CompressionPlan con al menos una consulta.
    """
    T, H, W = (int(v) for v in grid)
    if min(T, H, W) < 1:
        raise ErrorContrato(f"Rejilla inválida: {grid}")
    orientation = normalizar_orientacion(orientation)
    distancias = _distancias(T, orientation)
    brutos = np.array([H * W / ratio_at(strategy, float(d)) for d in distancias])

    total = int(math.floor(brutos.sum() + 0.5 + _TOLERANCIA))
    total = min(max(total, 1), T * H * W)
    recuentos = _mayor_resto(brutos, distancias, total, H * W)

    coordenadas = []
    for f, n_f in enumerate(recuentos):
        if n_f == 0:
            continue
        n_h, n_w = _factorizar(int(n_f), H, W)
        for a in range(n_h):
            for b in range(n_w):
                coordenadas.append((float(f),
                                    (a + 0.5) * H / n_h - 0.5,
                                    (b + 0.5) * W / n_w - 0.5))
    return CompressionPlan(
        grid=(T, H, W),
        n_queries=int(recuentos.sum()),
        positions=PositionLayout(coordenadas),
        per_frame_counts=tuple(int(c) for c in recuentos),
        strategy=strategy,
        orientation=orientation,
    )


def overall_ratio(plan):
    """Razón global T·H·W / N."""
    T, H, W = plan.grid
    return T * H * W / plan.n_queries


def continuous_ratio(strategy):
    """
    Límite continuo de la razón global (inversa de la densidad media ∫dδ/r(δ)).

    Lineal: (r_far - r_near)/ln(r_far/r_near). Logarítmica: r_near·ln q/(1 - 1/q).
    """
    if strategy.kind == "uniform" or strategy.r_far == strategy.r_near:
        return strategy.r_far
    q = strategy.r_far / strategy.r_near
    if strategy.kind == "linear":
        return (strategy.r_far - strategy.r_near) / math.log(q)
    return strategy.r_near * math.log(q) / (1.0 - 1.0 / q)


def format_plan(plan):
    """Texto diagnóstico: `index p_t p_h p_w`, una línea por consulta."""
    lineas = [f"{i} {pt:.6f} {ph:.6f} {pw:.6f}"
              for i, (pt, ph, pw) in enumerate(plan.positions.coords)]
    return "\n".join(lineas) + ("\n" if lineas else "")
