# Este archivo convierte el directorio 'test_core' en un paquete de Python.
# Pruebas de los algoritmos del núcleo, los servicios y la CLI.
