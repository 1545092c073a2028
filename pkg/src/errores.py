"""
Módulo errores.py
-----------------
Jerarquía de excepciones del sistema. La CLI traduce cada familia a un código
de salida:

- `ErrorConfiguracion` y sus subclases -> código 1.
- Cualquier otro `ErrorLovic` -> código 2 (error en tiempo de ejecución).
"""


class ErrorLovic(Exception):
    """Raíz de todas las excepciones propias del sistema."""


class ErrorConfiguracion(ErrorLovic):
    """Configuración inválida: anchos incompatibles, claves desconocidas, K=0, etc."""


class ErrorArranque(ErrorConfiguracion):
    """Falta un prerrequisito para arrancar (por ejemplo, el checkpoint de la etapa anterior)."""


class ErrorDimension(ErrorLovic):
    """Formas incompatibles entre tensores."""


class ErrorLayout(ErrorLovic):
    """Disposición posicional inconsistente (número de posiciones, intervalos solapados)."""


class ErrorContrato(ErrorLovic):
    """Se ha violado la precondición de una operación (pérdida no escalar, formas distintas)."""


class ErrorDominio(ErrorLovic):
    """Argumento fuera de su dominio (t fuera de [0,1], distancia fuera de [0,1])."""


class ErrorEspecificacion(ErrorLovic):
    """Especificación de clip sintético inválida (el blob sale de la rejilla)."""


class ErrorNumerico(ErrorLovic):
    """Valores NaN o infinitos en datos externos."""


class ErrorDivergencia(ErrorLovic):
    """El entrenamiento ha divergido (pérdida no finita o mayor que el umbral)."""


class ErrorCheckpoint(ErrorLovic):
    """Fichero de checkpoint ilegible o con formato incorrecto."""
