# Este archivo convierte el directorio 'test_utils' en un paquete de Python.
# Pruebas de formatos de archivo y utilidades numéricas.
